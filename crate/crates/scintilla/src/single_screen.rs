//! Weak-scintillation single-phase-screen model.
//!
//! All lengths are in units of the beam waist ω0, so every result depends on
//! the turbulence only through ω0/r0. The ensemble-averaged density matrix
//!
//! ρ_mn = ∬ E_m*(r1) ψ(r1) E_n(r2) ψ*(r2) exp(−½D(|r1 − r2|)) d²r1 d²r2
//!
//! is evaluated as a discrete correlation on a zero-padded grid, so the sum
//! over both positions is exact for the sampled integrand.

use crate::error::{Error, Result};
use crate::grid::Fft2;
use crate::ipe::{DensityMatrix, TwoPhotonDensity};
use crate::mc::{auto_subharmonic_levels, ScreenGenerator, ScreenGrid};
use crate::metrics;
use crate::modes::{lg_profile, ModalBasis, ModeIndex};
use crate::turbulence::{structure_function, StructureKind, TurbulenceSpec};
use ndarray::{Array2, Array4, Zip};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Position grid and convergence settings, lengths in units of ω0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpssOptions {
    pub n_side: usize,
    pub half_width: f64,
    /// Largest accepted max|ρ(n) − ρ(n/2)|.
    pub tolerance: f64,
    pub check_convergence: bool,
}

impl Default for SpssOptions {
    fn default() -> Self {
        SpssOptions {
            n_side: 256,
            half_width: 6.0,
            tolerance: 1e-4,
            check_convergence: true,
        }
    }
}

impl SpssOptions {
    fn validate(&self) -> Result<()> {
        if self.n_side < 16 || self.n_side % 2 != 0 {
            return Err(Error::config("n_side", "must be even and at least 16"));
        }
        if !(self.half_width > 0.0 && self.half_width.is_finite()) {
            return Err(Error::config("half_width", "must be positive"));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::config("tolerance", "must be positive"));
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.n_side as f64
    }
}

/// Single-photon input, unit norm within 1e-9.
#[derive(Debug, Clone, PartialEq)]
pub enum InputState {
    /// Coefficients over the basis.
    Coefficients(Vec<C64>),
    /// Samples ψ(x, y) on the options grid: x_i = (i − n/2)·h, row index is x.
    Field(Array2<C64>),
}

/// Which photons of a pair pass through independent screens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairArms {
    OneArm,
    BothArms,
}

const NORM_TOLERANCE: f64 = 1e-9;

#[derive(Debug)]
struct Level {
    n: usize,
    h: f64,
    modes: Vec<Array2<C64>>,
    fft: Fft2,
}

impl Level {
    fn new(basis: &ModalBasis, n: usize, half_width: f64) -> Result<Self> {
        let h = 2.0 * half_width / n as f64;
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 - (n / 2) as f64) * h).collect();
        let modes = basis
            .modes
            .iter()
            .map(|m| match *m {
                ModeIndex::LaguerreGauss { p, l } => Ok(Array2::from_shape_fn((n, n), |(i, j)| {
                    let (x, y) = (xs[i], xs[j]);
                    lg_profile(p, l, 1.0, x.hypot(y), y.atan2(x))
                })),
                ModeIndex::Grid { .. } => Err(Error::Domain("single-screen model needs an LG basis".into())),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Level {
            n,
            h,
            modes,
            fft: Fft2::new(2 * n),
        })
    }

    fn padded_fft(&self, g: &Array2<C64>) -> Array2<C64> {
        let n = self.n;
        let mut p = Array2::<C64>::zeros((2 * n, 2 * n));
        p.slice_mut(ndarray::s![..n, ..n]).assign(g);
        self.fft.forward(&mut p);
        p
    }

    /// Transform of the kernel exp(−½D) over circular offsets of the padded grid.
    fn kernel(&self, w_over_r0: f64, kind: StructureKind) -> Array2<f64> {
        let m = 2 * self.n;
        let off = |i: usize| if i < self.n { i as f64 } else { i as f64 - m as f64 };
        let mut k = Array2::from_shape_fn((m, m), |(i, j)| {
            let r = off(i).hypot(off(j)) * self.h * w_over_r0;
            let d = if r == 0.0 { 0.0 } else { structure_function(r, 1.0, kind).unwrap_or(f64::INFINITY) };
            C64::new((-0.5 * d).exp(), 0.0)
        });
        self.fft.forward(&mut k);
        k.mapv(|v| v.re)
    }

    /// G_ij = h⁴ Σ g_i(r1) conj(g_j(r2)) K(r1 − r2), from padded transforms.
    fn gram(&self, fs: &[Array2<C64>], khat: &Array2<f64>) -> Array2<C64> {
        let nf = fs.len();
        let m = (2 * self.n) as f64;
        let scale = self.h.powi(4) / (m * m);
        let pairs: Vec<(usize, usize)> = (0..nf).flat_map(|i| (i..nf).map(move |j| (i, j))).collect();
        let vals: Vec<C64> = pairs
            .par_iter()
            .map(|&(i, j)| {
                let mut acc = C64::new(0.0, 0.0);
                Zip::from(&fs[i]).and(&fs[j]).and(khat).for_each(|a, b, k| acc += a * b.conj() * k);
                acc * scale
            })
            .collect();
        let mut g = Array2::<C64>::zeros((nf, nf));
        for (&(i, j), v) in pairs.iter().zip(vals) {
            g[[i, j]] = v;
            g[[j, i]] = v.conj();
        }
        g
    }

    fn sample_input(&self, psi: &InputState) -> Result<Array2<C64>> {
        let n = self.n;
        match psi {
            InputState::Coefficients(c) => {
                if c.len() != self.modes.len() {
                    return Err(Error::Dimension(format!("{} coefficients for {} modes", c.len(), self.modes.len())));
                }
                let mut f = Array2::<C64>::zeros((n, n));
                for (ci, e) in c.iter().zip(&self.modes) {
                    f.scaled_add(*ci, e);
                }
                Ok(f)
            }
            InputState::Field(s) => {
                let full = s.nrows();
                if s.dim() != (full, full) || full % n != 0 {
                    return Err(Error::Dimension(format!("field is {:?}, grid is {n}²", s.dim())));
                }
                // coarser levels subsample the full-resolution field
                let step = full / n;
                Ok(Array2::from_shape_fn((n, n), |(i, j)| s[[i * step, j * step]]))
            }
        }
    }
}

fn check_norm(psi: &InputState, opts: &SpssOptions) -> Result<()> {
    let norm = match psi {
        InputState::Coefficients(c) => c.iter().map(|v| v.norm_sqr()).sum::<f64>(),
        InputState::Field(s) => {
            if s.dim() != (opts.n_side, opts.n_side) {
                return Err(Error::Dimension(format!("field is {:?}, grid is {}²", s.dim(), opts.n_side)));
            }
            s.iter().map(|v| v.norm_sqr()).sum::<f64>() * opts.spacing().powi(2)
        }
    };
    if (norm - 1.0).abs() > NORM_TOLERANCE {
        return Err(Error::InvalidState(format!("input norm² is {norm}, expected 1")));
    }
    Ok(())
}

fn check_w(w_over_r0: f64) -> Result<()> {
    if !(w_over_r0 >= 0.0 && w_over_r0.is_finite()) {
        return Err(Error::Domain(format!("w_over_r0 must be >= 0, got {w_over_r0}")));
    }
    Ok(())
}

/// Single-screen channel on an LG basis. Holds the sampled modes at full and
/// half resolution so parameter sweeps reuse every transform but the kernel's.
#[derive(Debug)]
pub struct SingleScreenChannel {
    opts: SpssOptions,
    levels: Vec<Level>,
    n_modes: usize,
    /// Padded transforms of E_m* E_a, index m·N + a, per level.
    products: Vec<Vec<Array2<C64>>>,
}

impl SingleScreenChannel {
    pub fn new(basis: &ModalBasis, opts: SpssOptions) -> Result<Self> {
        opts.validate()?;
        let mut levels = vec![Level::new(basis, opts.n_side, opts.half_width)?];
        if opts.check_convergence {
            levels.push(Level::new(basis, opts.n_side / 2, opts.half_width)?);
        }
        Ok(SingleScreenChannel {
            opts,
            levels,
            n_modes: basis.len(),
            products: Vec::new(),
        })
    }

    pub fn options(&self) -> &SpssOptions {
        &self.opts
    }

    /// Evaluates `f` per level and checks agreement between resolutions.
    fn converged<T, F>(&self, mut f: F, diff: impl Fn(&T, &T) -> f64) -> Result<T>
    where
        F: FnMut(usize) -> Result<T>,
    {
        let fine = f(0)?;
        if self.levels.len() > 1 {
            let coarse = f(1)?;
            let achieved = diff(&fine, &coarse);
            if !(achieved <= self.opts.tolerance) {
                return Err(Error::Quadrature {
                    achieved,
                    requested: self.opts.tolerance,
                });
            }
        }
        Ok(fine)
    }

    /// Ensemble-averaged ρ for a single photon.
    pub fn density_matrix(&self, psi: &InputState, w_over_r0: f64, kind: StructureKind) -> Result<DensityMatrix> {
        check_w(w_over_r0)?;
        check_norm(psi, &self.opts)?;
        let rho = self.converged(
            |li| {
                let lv = &self.levels[li];
                let field = lv.sample_input(psi)?;
                let fs: Vec<Array2<C64>> = lv.modes.iter().map(|e| lv.padded_fft(&(e.mapv(|v| v.conj()) * &field))).collect();
                Ok(lv.gram(&fs, &lv.kernel(w_over_r0, kind)))
            },
            max_diff2,
        )?;
        DensityMatrix::new(hermitize(rho))
    }

    fn ensure_products(&mut self) {
        if !self.products.is_empty() {
            return;
        }
        let n = self.n_modes;
        self.products = self
            .levels
            .iter()
            .map(|lv| {
                (0..n * n)
                    .into_par_iter()
                    .map(|ma| {
                        let (m, a) = (ma / n, ma % n);
                        lv.padded_fft(&(lv.modes[m].mapv(|v| v.conj()) * &lv.modes[a]))
                    })
                    .collect()
            })
            .collect();
    }

    /// Channel superoperator S[m, a, p, a'] = Λ(|a⟩⟨a'|)_mp.
    pub fn superoperator(&mut self, w_over_r0: f64, kind: StructureKind) -> Result<Array4<C64>> {
        check_w(w_over_r0)?;
        self.ensure_products();
        let n = self.n_modes;
        self.converged(
            |li| {
                let lv = &self.levels[li];
                let g = lv.gram(&self.products[li], &lv.kernel(w_over_r0, kind));
                Ok(Array4::from_shape_fn((n, n, n, n), |(m, a, p, a2)| g[[m * n + a, p * n + a2]]))
            },
            |x, y| (x - y).iter().fold(0.0f64, |acc, v| acc.max(v.norm())),
        )
    }

    /// Pair state after screens on one or both photons.
    pub fn pair_density(
        &mut self,
        rho: &TwoPhotonDensity,
        w_over_r0: f64,
        kind: StructureKind,
        arms: PairArms,
    ) -> Result<TwoPhotonDensity> {
        let n = self.n_modes;
        if rho.dim() != n {
            return Err(Error::Dimension(format!("pair state dim {} vs basis {n}", rho.dim())));
        }
        let tr = rho.trace();
        if (tr - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::InvalidState(format!("joint state trace is {tr}, expected 1")));
        }
        let s = self.superoperator(w_over_r0, kind)?;
        let out = apply_channel(&s, &rho.rho, arms);
        TwoPhotonDensity::new(hermitize_pair(out))
    }
}

/// ρ[a, a', b, b'] → Σ S[m, a, p, a'] ρ[a, a', ...] on photon A, and likewise on B.
fn apply_channel(s: &Array4<C64>, rho: &Array4<C64>, arms: PairArms) -> Array4<C64> {
    let n = rho.dim().0;
    let on_a = |r: &Array4<C64>| {
        Array4::from_shape_fn((n, n, n, n), |(m, p, b, b2)| {
            let mut acc = C64::new(0.0, 0.0);
            for a in 0..n {
                for a2 in 0..n {
                    acc += s[[m, a, p, a2]] * r[[a, a2, b, b2]];
                }
            }
            acc
        })
    };
    let out = on_a(rho);
    match arms {
        PairArms::OneArm => out,
        PairArms::BothArms => {
            // swap photons, apply, swap back
            let swapped = out.view().permuted_axes([2, 3, 0, 1]).to_owned();
            on_a(&swapped).permuted_axes([2, 3, 0, 1]).as_standard_layout().to_owned()
        }
    }
}

fn max_diff2(a: &Array2<C64>, b: &Array2<C64>) -> f64 {
    (a - b).iter().fold(0.0f64, |acc, v| acc.max(v.norm()))
}

fn hermitize(m: Array2<C64>) -> Array2<C64> {
    let t = m.t().mapv(|v| v.conj());
    (m + t) * C64::new(0.5, 0.0)
}

fn hermitize_pair(r: Array4<C64>) -> Array4<C64> {
    let m = metrics::pair_matrix(&r);
    metrics::pair_tensor(&hermitize(m)).expect("square pair matrix")
}

/// Ensemble-averaged single-photon density matrix.
pub fn spss_density_matrix(
    psi: &InputState,
    basis: &ModalBasis,
    w_over_r0: f64,
    kind: StructureKind,
    opts: SpssOptions,
) -> Result<DensityMatrix> {
    SingleScreenChannel::new(basis, opts)?.density_matrix(psi, w_over_r0, kind)
}

/// Pair state with the screen applied to photon A (`OneArm`) or independent
/// screens on both photons (`BothArms`).
pub fn spss_pair_density(
    rho: &TwoPhotonDensity,
    basis: &ModalBasis,
    w_over_r0: f64,
    kind: StructureKind,
    arms: PairArms,
    opts: SpssOptions,
) -> Result<TwoPhotonDensity> {
    SingleScreenChannel::new(basis, opts)?.pair_density(rho, w_over_r0, kind, arms)
}

/// Monte Carlo estimate with per-element standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct SpssMcResult {
    pub rho: Array2<C64>,
    /// Standard errors of the real and imaginary parts.
    pub stderr: Array2<C64>,
    pub n_trials: usize,
}

/// Brute-force oracle: multiply ψ by one random screen per trial, project,
/// average the projectors. Quadratic screens are exact random tilts;
/// Kolmogorov screens come from the subharmonic FFT generator.
pub fn spss_mc_oracle(
    psi: &InputState,
    basis: &ModalBasis,
    w_over_r0: f64,
    kind: StructureKind,
    n_trials: usize,
    seed: u64,
    opts: SpssOptions,
) -> Result<SpssMcResult> {
    check_w(w_over_r0)?;
    if n_trials == 0 {
        return Err(Error::config("n_trials", "must be at least 1"));
    }
    let opts = SpssOptions {
        check_convergence: false,
        ..opts
    };
    opts.validate()?;
    check_norm(psi, &opts)?;
    let lv = Level::new(basis, opts.n_side, opts.half_width)?;
    let field = lv.sample_input(psi)?;
    let n = lv.n;
    let h = lv.h;
    let xs: Vec<f64> = (0..n).map(|i| (i as f64 - (n / 2) as f64) * h).collect();
    let generator = match kind {
        StructureKind::Kolmogorov if w_over_r0 > 0.0 => {
            // wavelength 1, Δz 1, Cn² chosen so that r0 = ω0 / w_over_r0
            let grid = ScreenGrid::new(n, h)?;
            let spec = TurbulenceSpec::kolmogorov((0.185 * w_over_r0).powf(5.0 / 3.0))?;
            let levels = auto_subharmonic_levels(&grid, &spec);
            Some(ScreenGenerator::new(grid, &spec, 2.0 * PI, 1.0, levels)?)
        }
        _ => None,
    };
    let tilt_sigma = (6.88f64).sqrt() * w_over_r0;
    let nm = basis.len();
    let coeffs: Vec<Vec<C64>> = (0..n_trials)
        .into_par_iter()
        .map(|t| {
            let theta: Array2<f64> = match &generator {
                Some(g) => g.screens(seed, t as u64, 1).remove(0).samples,
                None => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(t as u64);
                    let ax: f64 = rng.sample::<f64, _>(StandardNormal) * tilt_sigma;
                    let ay: f64 = rng.sample::<f64, _>(StandardNormal) * tilt_sigma;
                    Array2::from_shape_fn((n, n), |(i, j)| ax * xs[i] + ay * xs[j])
                }
            };
            let phi = Zip::from(&field).and(&theta).map_collect(|f, th| f * C64::from_polar(1.0, *th));
            lv.modes
                .iter()
                .map(|e| Zip::from(e).and(&phi).fold(C64::new(0.0, 0.0), |acc, e, p| acc + e.conj() * p) * (h * h))
                .collect()
        })
        .collect();
    let nt = n_trials as f64;
    let mut sum = Array2::<C64>::zeros((nm, nm));
    let mut sq = Array2::<C64>::zeros((nm, nm));
    for c in &coeffs {
        for i in 0..nm {
            for j in 0..nm {
                let v = c[i] * c[j].conj();
                sum[[i, j]] += v;
                sq[[i, j]] += C64::new(v.re * v.re, v.im * v.im);
            }
        }
    }
    let rho = sum.mapv(|v| v / nt);
    let stderr = Zip::from(&rho).and(&sq).map_collect(|m, s| {
        let var = |s: f64, m: f64| if n_trials > 1 { ((s / nt - m * m).max(0.0) * nt / (nt - 1.0) / nt).sqrt() } else { 0.0 };
        C64::new(var(s.re, m.re), var(s.im, m.im))
    });
    Ok(SpssMcResult { rho, stderr, n_trials })
}

/// One point of a concurrence sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcurrencePoint {
    pub w_over_r0: f64,
    pub concurrence: f64,
    /// Unclamped Wootters quantity; its sign change locates the crossing.
    pub margin: f64,
    pub kept_weight: f64,
    pub trace: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcurrenceCurve {
    pub l: i32,
    pub points: Vec<ConcurrencePoint>,
    /// First zero of the margin, by linear interpolation.
    pub crossing: Option<f64>,
}

/// Sweeps ω0/r0 for the Bell state (|+ℓ⟩|−ℓ⟩ + |−ℓ⟩|+ℓ⟩)/√2 on the basis
/// {LG(0, ℓ), LG(0, −ℓ)}, projecting back onto that qubit pair.
pub fn concurrence_curve(
    l: i32,
    w_values: &[f64],
    kind: StructureKind,
    arms: PairArms,
    opts: SpssOptions,
) -> Result<ConcurrenceCurve> {
    if l == 0 {
        return Err(Error::Domain("Bell state needs ℓ ≠ 0".into()));
    }
    // the modal grid is unused by the single-screen model
    let grid = crate::grid::FrequencyGrid::default_for_waist(1.0)?;
    let basis = ModalBasis::new(vec![ModeIndex::lg(0, l), ModeIndex::lg(0, -l)], 1.0, grid)?;
    let bell = TwoPhotonDensity::bell(2, 0, 1)?;
    let mut ch = SingleScreenChannel::new(&basis, opts)?;
    let mut points = Vec::with_capacity(w_values.len());
    for &w in w_values {
        let out = ch.pair_density(&bell, w, kind, arms)?;
        let q = metrics::qubit_reduce_indices(&out.rho, 0, 1)?;
        let margin = metrics::wootters_margin(&q.rho)?;
        points.push(ConcurrencePoint {
            w_over_r0: w,
            concurrence: margin.clamp(0.0, 1.0),
            margin,
            kept_weight: q.kept_weight,
            trace: out.trace(),
        });
    }
    let crossing = zero_crossing(&points);
    Ok(ConcurrenceCurve { l, points, crossing })
}

fn zero_crossing(points: &[ConcurrencePoint]) -> Option<f64> {
    points.windows(2).find_map(|w| {
        let (a, b) = (&w[0], &w[1]);
        (a.margin > 0.0 && b.margin <= 0.0)
            .then(|| a.w_over_r0 + (b.w_over_r0 - a.w_over_r0) * a.margin / (a.margin - b.margin))
    })
}

/// Evenly spaced sweep values from `start` to `stop` inclusive.
pub fn linspace(start: f64, stop: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![start],
        _ => (0..n).map(|i| start + (stop - start) * i as f64 / (n - 1) as f64).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::FrequencyGrid;
    use approx::assert_relative_eq;

    fn basis(modes: Vec<ModeIndex>) -> ModalBasis {
        ModalBasis::new(modes, 1.0, FrequencyGrid::default_for_waist(1.0).unwrap()).unwrap()
    }

    fn small() -> SpssOptions {
        SpssOptions {
            n_side: 128,
            ..Default::default()
        }
    }

    fn oam3() -> ModalBasis {
        basis(vec![ModeIndex::lg(0, 1), ModeIndex::lg(0, -1), ModeIndex::lg(0, 0), ModeIndex::lg(1, 1)])
    }

    #[test]
    fn no_turbulence_gives_projector() {
        let b = oam3();
        let c = vec![C64::new(0.6, 0.0), C64::new(0.0, 0.8), C64::new(0.0, 0.0), C64::new(0.0, 0.0)];
        let rho = spss_density_matrix(&InputState::Coefficients(c.clone()), &b, 0.0, StructureKind::Quadratic, small()).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert!((rho.rho[[i, j]] - c[i] * c[j].conj()).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn survival_decreases_and_stays_physical() {
        let b = oam3();
        let psi = InputState::Coefficients(vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0)]);
        let ch = SingleScreenChannel::new(&b, small()).unwrap();
        let r5 = ch.density_matrix(&psi, 0.5, StructureKind::Quadratic).unwrap();
        let r10 = ch.density_matrix(&psi, 1.0, StructureKind::Quadratic).unwrap();
        let s5 = r5.rho[[0, 0]].re;
        assert!(s5 > 0.0 && s5 < 1.0 && s5 > r10.rho[[0, 0]].re);
        for r in [&r5, &r10] {
            assert!(r.trace() <= 1.0 + 1e-6);
            assert!(metrics::hermitian_eigenvalues(&r.rho).unwrap()[0] >= -1e-8);
        }
        // quadratic kernel: tilt only, so LG(0,1) leaks into LG(0,0) and LG(1,1)
        assert!(r5.rho[[2, 2]].re > 1e-3);
        assert!(r5.rho[[1, 1]].re < r5.rho[[2, 2]].re);
    }

    #[test]
    fn field_input_matches_coefficients() {
        let b = oam3();
        let opts = small();
        let c = vec![C64::new(0.6, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.8), C64::new(0.0, 0.0)];
        let lv = Level::new(&b, opts.n_side, opts.half_width).unwrap();
        let field = lv.sample_input(&InputState::Coefficients(c.clone())).unwrap();
        let a = spss_density_matrix(&InputState::Coefficients(c), &b, 0.7, StructureKind::Kolmogorov, opts).unwrap();
        let f = spss_density_matrix(&InputState::Field(field), &b, 0.7, StructureKind::Kolmogorov, opts).unwrap();
        assert!(max_diff2(&a.rho, &f.rho) < 1e-9);
    }

    #[test]
    fn rejects_bad_inputs() {
        let b = oam3();
        let c = InputState::Coefficients(vec![C64::new(1.0, 0.0); 4]);
        assert!(spss_density_matrix(&c, &b, 0.5, StructureKind::Quadratic, small()).is_err());
        let ok = InputState::Coefficients(vec![C64::new(1.0, 0.0), C64::default(), C64::default(), C64::default()]);
        assert!(spss_density_matrix(&ok, &b, -0.1, StructureKind::Quadratic, small()).is_err());
        let coarse = SpssOptions {
            n_side: 16,
            half_width: 12.0,
            tolerance: 1e-8,
            check_convergence: true,
        };
        assert!(matches!(
            spss_density_matrix(&ok, &b, 1.0, StructureKind::Kolmogorov, coarse),
            Err(Error::Quadrature { .. })
        ));
    }

    #[test]
    fn mc_oracle_agrees_on_diagonal() {
        let b = oam3();
        let psi = InputState::Coefficients(vec![C64::new(0.8, 0.0), C64::new(0.0, 0.6), C64::default(), C64::default()]);
        let opts = small();
        let exact = spss_density_matrix(&psi, &b, 0.6, StructureKind::Quadratic, opts).unwrap();
        let mc = spss_mc_oracle(&psi, &b, 0.6, StructureKind::Quadratic, 2000, 11, opts).unwrap();
        for i in 0..4 {
            let z = (mc.rho[[i, i]].re - exact.rho[[i, i]].re) / mc.stderr[[i, i]].re.max(1e-12);
            assert!(z.abs() < 3.0, "element {i}: z = {z}");
        }
        let one = spss_mc_oracle(&psi, &b, 0.0, StructureKind::Kolmogorov, 1, 3, opts).unwrap();
        let proj = spss_density_matrix(&psi, &b, 0.0, StructureKind::Kolmogorov, opts).unwrap();
        assert!(max_diff2(&one.rho, &proj.rho) < 1e-12);
    }

    #[test]
    fn pair_channel_limits() {
        let b = basis(vec![ModeIndex::lg(0, 1), ModeIndex::lg(0, -1)]);
        let bell = TwoPhotonDensity::bell(2, 0, 1).unwrap();
        for arms in [PairArms::OneArm, PairArms::BothArms] {
            let out = spss_pair_density(&bell, &b, 0.0, StructureKind::Quadratic, arms, small()).unwrap();
            let q = metrics::qubit_reduce_indices(&out.rho, 0, 1).unwrap();
            assert_relative_eq!(metrics::concurrence(&q.rho).unwrap(), 1.0, epsilon = 1e-6);
            let out = spss_pair_density(&bell, &b, 0.8, StructureKind::Quadratic, arms, small()).unwrap();
            assert!(out.hermiticity_defect() < 1e-12);
            assert!(out.trace() <= 1.0 + 1e-9);
            let ev = metrics::hermitian_eigenvalues(&metrics::pair_matrix(&out.rho)).unwrap();
            assert!(ev[0] >= -1e-8);
        }
    }

    #[test]
    fn one_arm_leaves_partner_marginal() {
        let b = basis(vec![ModeIndex::lg(0, 1), ModeIndex::lg(0, -1), ModeIndex::lg(0, 0)]);
        let bell = TwoPhotonDensity::bell(3, 0, 1).unwrap();
        let out = spss_pair_density(&bell, &b, 0.9, StructureKind::Kolmogorov, PairArms::OneArm, small()).unwrap();
        // Σ over photon A of the channel output is below the input marginal, never above
        let n = 3;
        for k in 0..n {
            let before: f64 = (0..n).map(|a| bell.rho[[a, a, k, k]].re).sum();
            let after: f64 = (0..n).map(|a| out.rho[[a, a, k, k]].re).sum();
            assert!(after <= before + 1e-12);
        }
    }

    #[test]
    fn zero_crossing_interpolates() {
        let pts: Vec<ConcurrencePoint> = [(0.0, 1.0), (1.0, 0.5), (2.0, -0.5)]
            .iter()
            .map(|&(w, m)| ConcurrencePoint {
                w_over_r0: w,
                concurrence: f64::max(m, 0.0),
                margin: m,
                kept_weight: 1.0,
                trace: 1.0,
            })
            .collect();
        assert_relative_eq!(zero_crossing(&pts).unwrap(), 1.5);
        assert_eq!(linspace(0.0, 2.0, 5), vec![0.0, 0.5, 1.0, 1.5, 2.0]);
    }
}
