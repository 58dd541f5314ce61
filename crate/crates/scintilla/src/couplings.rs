//! Kinetic matrix P, coupling tensor Λ and total decay constant Λ_T.
//!
//! Λ_mnpq = k² ∫ W_mp(a) W_nq*(a) Φ1(a) d²a and Λ_T = k² ∫ Φ1(a) d²a share one
//! polar rule. The disk below the rule's inner radius (where W is the
//! identity to high accuracy) is folded into both, and the tail beyond the
//! grid extent (where W vanishes) only into Λ_T.

use crate::error::{Error, Result};
use crate::grid::{Fft2, FrequencyGrid};
use crate::modes::{BasisFamily, ModalBasis, ModeIndex};
use crate::quadrature::{PolarNodes, PolarQuadrature};
use crate::turbulence::TurbulenceSpec;
use ndarray::{Array2, Array4};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Plane at which mode functions enter P, W and Λ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeFrame {
    /// Modes frozen at the waist plane; free diffraction enters through P.
    Waist,
    /// Modes G_m(a, z) that diffract with the beam; Λ is re-evaluated at each
    /// z and P is dropped, since free propagation is carried by the modes.
    CoPropagating,
}

/// How W†W is closed in the Lindblad anticommutator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Closure {
    /// Σ over the complete mode space, W†W = 1. Identical to the IPE.
    Complete,
    /// Σ over the retained modes only; trace preserving on the subspace.
    Truncated,
}

/// P_mp = (2π²/k) ∫ |a|² G_m*(a) G_p(a) d²a on the frequency grid.
pub fn kinetic_matrix(basis: &ModalBasis, k: f64) -> Result<Array2<C64>> {
    if !(k > 0.0) {
        return Err(Error::Domain(format!("wavenumber must be > 0, got {k}")));
    }
    let g = &basis.grid;
    let n = basis.len();
    let da = g.spacing();
    let nodes = g.nodes();
    let a2 = Array2::from_shape_fn((g.n_side, g.n_side), |(i, j)| nodes[i] * nodes[i] + nodes[j] * nodes[j]);
    let spectra: Vec<Array2<C64>> = (0..n).map(|m| basis.spectrum(m, 0.0, 1.0)).collect();
    let mut p = Array2::<C64>::zeros((n, n));
    for a in 0..n {
        for b in a..n {
            let s: C64 = spectra[a]
                .iter()
                .zip(spectra[b].iter())
                .zip(a2.iter())
                .map(|((x, y), r)| x.conj() * y * r)
                .sum();
            let v = s * (2.0 * PI * PI / k * da * da);
            p[[a, b]] = v;
            p[[b, a]] = v.conj();
        }
    }
    if p.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::NonFinite("kinetic matrix".into()));
    }
    Ok(p)
}

/// Descriptor of how a coupling set was produced; also the cache key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingProvenance {
    pub modes: Vec<ModeIndex>,
    pub waist: f64,
    pub grid: FrequencyGrid,
    pub wavelength: f64,
    pub spec: TurbulenceSpec,
    pub quad: PolarQuadrature,
    pub r_min: f64,
    pub r_max: f64,
    pub frame: ModeFrame,
    pub z: f64,
}

/// P, Λ and Λ_T for one basis, turbulence model and evaluation plane.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CouplingSet {
    pub p: Array2<C64>,
    /// Indexed [m, n, p, q].
    pub lambda: Array4<C64>,
    pub lambda_t: f64,
    /// Split of Λ_T: polar rule, inner disk, outer tail.
    pub lambda_t_parts: [f64; 3],
    pub provenance: CouplingProvenance,
}

impl CouplingSet {
    pub fn dim(&self) -> usize {
        self.p.nrows()
    }

    /// A coupling set with no turbulence and a given kinetic matrix.
    pub fn unitary(p: Array2<C64>, provenance: CouplingProvenance) -> Self {
        let n = p.nrows();
        CouplingSet {
            p,
            lambda: Array4::zeros((n, n, n, n)),
            lambda_t: 0.0,
            lambda_t_parts: [0.0; 3],
            provenance,
        }
    }

    /// max|P − P†|.
    pub fn kinetic_hermiticity_defect(&self) -> f64 {
        let n = self.dim();
        let mut d: f64 = 0.0;
        for a in 0..n {
            for b in 0..n {
                d = d.max((self.p[[a, b]] - self.p[[b, a]].conj()).norm());
            }
        }
        d
    }

    /// max|Λ_mnpq − Λ*_nmqp|.
    pub fn lambda_symmetry_defect(&self) -> f64 {
        let mut d: f64 = 0.0;
        for ((m, n, p, q), v) in self.lambda.indexed_iter() {
            d = d.max((v - self.lambda[[n, m, q, p]].conj()).norm());
        }
        d
    }

    /// max_mn |Σ_p Λ_mnpp − δ_mn Λ_T| / Λ_T over the given rows.
    pub fn contraction_defect(&self, rows: &[usize]) -> f64 {
        if self.lambda_t == 0.0 {
            return 0.0;
        }
        let n = self.dim();
        let mut d: f64 = 0.0;
        for &m in rows {
            for &nn in rows {
                let s: C64 = (0..n).map(|p| self.lambda[[m, nn, p, p]]).sum();
                let t = if m == nn { self.lambda_t } else { 0.0 };
                d = d.max((s - t).norm() / self.lambda_t);
            }
        }
        d
    }

    /// Largest absolute row sum of the dissipative superoperator
    /// ρ ↦ Λρ − Λ_T ρ, a rate that sets the step size.
    pub fn dissipative_rate(&self) -> f64 {
        let n = self.dim();
        let mut worst: f64 = 0.0;
        for m in 0..n {
            for nn in 0..n {
                let mut s = 0.0;
                for p in 0..n {
                    for q in 0..n {
                        let mut v = self.lambda[[m, nn, p, q]];
                        if m == p && nn == q {
                            v -= self.lambda_t;
                        }
                        s += v.norm();
                    }
                }
                worst = worst.max(s);
            }
        }
        worst
    }
}

/// Overlap kernels W(a) on the nodes of a polar rule.
#[derive(Debug, Clone)]
enum OverlapTable {
    /// LG modes: W_ab(ρ, φ) = e^{i(ℓb−ℓa)φ} w_ab(ρ); w stored per radial node.
    Radial { l: Vec<i32>, w: Vec<Array2<C64>> },
    /// Grid modes: closed-form Dirichlet kernels.
    Grid { freqs: Vec<[f64; 2]>, phase: Vec<C64>, dx: f64, n: usize },
}

/// Shared machinery for Λ assembly and the streaming Lindblad right-hand side.
#[derive(Debug, Clone)]
pub struct CouplingAssembler {
    pub basis: ModalBasis,
    pub wavelength: f64,
    pub spec: TurbulenceSpec,
    pub quad: PolarQuadrature,
    pub frame: ModeFrame,
    pub z: f64,
    pub nodes: PolarNodes,
    /// k²·Φ1(ρ_j)·(radial weight)·(angular weight), per radial node.
    weights: Vec<f64>,
    disk: f64,
    tail: f64,
    table: OverlapTable,
}

impl CouplingAssembler {
    pub fn new(
        basis: &ModalBasis,
        wavelength: f64,
        spec: &TurbulenceSpec,
        quad: &PolarQuadrature,
        frame: ModeFrame,
        z: f64,
    ) -> Result<Self> {
        spec.validate()?;
        if !spec.is_regularized() && spec.cn2 > 0.0 {
            return Err(Error::InfraredDivergence(
                "Λ_T = k²∫Φ1 d²a is infinite for the pure Kolmogorov spectrum; set a von Karman outer scale".into(),
            ));
        }
        if !(wavelength > 0.0) {
            return Err(Error::Domain(format!("wavelength must be > 0, got {wavelength}")));
        }
        if quad.n_radial < 2 || quad.n_angular < 1 {
            return Err(Error::Domain("polar quadrature needs >= 2 radial and >= 1 angular nodes".into()));
        }
        let g = basis.grid;
        let r_max = quad.r_max.unwrap_or(g.extent);
        let r_min = quad.r_min.unwrap_or_else(|| {
            let k0 = spec.kappa0();
            if k0 > 0.0 {
                k0 / (2.0 * PI) * 1e-2
            } else {
                g.spacing() * 1e-4
            }
        });
        if !(r_min > 0.0 && r_max > r_min) {
            return Err(Error::Domain(format!("bad quadrature radii [{r_min}, {r_max}]")));
        }
        let nodes = PolarNodes::new(quad.n_radial, quad.n_angular, r_min, r_max);
        let k = 2.0 * PI / wavelength;
        let k2 = k * k;
        let weights = nodes
            .rho
            .iter()
            .zip(&nodes.radial_weight)
            .map(|(r, w)| k2 * spec.phi1_radial(*r) * w * nodes.angular_weight)
            .collect();
        let (disk, tail) = if spec.cn2 > 0.0 {
            (
                k2 * spec.phi1_integral_between(0.0, r_min)?,
                k2 * spec.phi1_integral_between(r_max, f64::INFINITY)?,
            )
        } else {
            (0.0, 0.0)
        };
        let zm = match frame {
            ModeFrame::Waist => 0.0,
            ModeFrame::CoPropagating => z,
        };
        let table = build_table(basis, wavelength, zm, &nodes)?;
        Ok(CouplingAssembler {
            basis: basis.clone(),
            wavelength,
            spec: *spec,
            quad: *quad,
            frame,
            z,
            nodes,
            weights,
            disk,
            tail,
            table,
        })
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.wavelength
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn lambda_t_parts(&self) -> [f64; 3] {
        let q: f64 = self.weights.iter().sum::<f64>() * self.nodes.phi.len() as f64;
        [q, self.disk, self.tail]
    }

    pub fn lambda_t(&self) -> f64 {
        self.lambda_t_parts().iter().sum()
    }

    /// W(a) at polar node (j, k) into `out` (N×N).
    pub fn w_matrix(&self, j: usize, k: usize, out: &mut Array2<C64>) {
        let rho = self.nodes.rho[j];
        let phi = self.nodes.phi[k];
        match &self.table {
            OverlapTable::Radial { l, w } => {
                let n = l.len();
                for a in 0..n {
                    for b in 0..n {
                        out[[a, b]] = w[j][[a, b]] * C64::from_polar(1.0, (l[b] - l[a]) as f64 * phi);
                    }
                }
            }
            OverlapTable::Grid { freqs, phase, dx, n } => {
                let a = [rho * phi.cos(), rho * phi.sin()];
                let nn = freqs.len();
                for p in 0..nn {
                    for q in 0..nn {
                        let ux = freqs[p][0] - freqs[q][0] - a[0];
                        let uy = freqs[p][1] - freqs[q][1] - a[1];
                        out[[p, q]] = phase[p].conj() * phase[q] * dirichlet(ux, *dx, *n) * dirichlet(uy, *dx, *n)
                            / (*n as f64 * *n as f64);
                    }
                }
            }
        }
    }

    pub fn provenance(&self) -> CouplingProvenance {
        CouplingProvenance {
            modes: self.basis.modes.clone(),
            waist: self.basis.waist,
            grid: self.basis.grid,
            wavelength: self.wavelength,
            spec: self.spec,
            quad: self.quad,
            r_min: self.nodes.r_min,
            r_max: self.nodes.r_max,
            frame: self.frame,
            z: self.z,
        }
    }

    /// Dense Λ. Refused above 32 modes; use the streaming Lindblad path.
    pub fn lambda(&self) -> Result<Array4<C64>> {
        let n = self.dim();
        if n > 32 {
            return Err(Error::Domain(format!(
                "dense Λ is limited to 32 modes (basis has {n}); use the Lindblad right-hand side"
            )));
        }
        let mut lam = Array4::<C64>::zeros((n, n, n, n));
        match &self.table {
            OverlapTable::Radial { l, w } => {
                for (j, wj) in w.iter().enumerate() {
                    let c = self.weights[j];
                    if c == 0.0 {
                        continue;
                    }
                    for m in 0..n {
                        for p in 0..n {
                            let wmp = wj[[m, p]] * c;
                            if wmp == C64::new(0.0, 0.0) {
                                continue;
                            }
                            let dmp = (l[p] - l[m]) as i64;
                            for nn in 0..n {
                                for q in 0..n {
                                    let dnq = (l[q] - l[nn]) as i64;
                                    // weights already carry the angular weight
                                    let ang = self.nodes.angular_sum(dmp - dnq) / self.nodes.angular_weight;
                                    if ang != 0.0 {
                                        lam[[m, nn, p, q]] += wmp * wj[[nn, q]].conj() * ang;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            OverlapTable::Grid { .. } => {
                let mut wm = Array2::<C64>::zeros((n, n));
                for j in 0..self.nodes.rho.len() {
                    let c = self.weights[j];
                    if c == 0.0 {
                        continue;
                    }
                    for k in 0..self.nodes.phi.len() {
                        self.w_matrix(j, k, &mut wm);
                        for ((m, nn, p, q), v) in lam.indexed_iter_mut() {
                            *v += wm[[m, p]] * wm[[nn, q]].conj() * c;
                        }
                    }
                }
            }
        }
        for m in 0..n {
            for nn in 0..n {
                lam[[m, nn, m, nn]] += self.disk;
            }
        }
        Ok(lam)
    }

    /// P (waist frame) or zero (co-propagating frame), Λ and Λ_T.
    pub fn coupling_set(&self) -> Result<CouplingSet> {
        let n = self.dim();
        let p = match self.frame {
            ModeFrame::Waist => kinetic_matrix(&self.basis, self.wavenumber())?,
            ModeFrame::CoPropagating => Array2::zeros((n, n)),
        };
        Ok(CouplingSet {
            p,
            lambda: self.lambda()?,
            lambda_t: self.lambda_t(),
            lambda_t_parts: self.lambda_t_parts(),
            provenance: self.provenance(),
        })
    }

    /// Dissipator (k²/2)∫Φ1[2WρW† − W†Wρ − ρW†W]d²a, streamed over nodes.
    pub fn lindblad_dissipator(&self, rho: &Array2<C64>, closure: Closure) -> Result<Array2<C64>> {
        let n = self.dim();
        if rho.dim() != (n, n) {
            return Err(Error::Dimension(format!("ρ is {:?}, basis has {n} modes", rho.dim())));
        }
        let mut out = Array2::<C64>::zeros((n, n));
        let mut w = Array2::<C64>::zeros((n, n));
        let mut wsum_q = Array2::<C64>::zeros((n, n));
        let mut c_total = 0.0;
        for j in 0..self.nodes.rho.len() {
            let c = self.weights[j];
            if c == 0.0 {
                continue;
            }
            for k in 0..self.nodes.phi.len() {
                self.w_matrix(j, k, &mut w);
                let wr = w.dot(rho);
                let wrw = wr.dot(&w.t().mapv(|v| v.conj()));
                out.scaled_add(C64::new(c, 0.0), &wrw);
                match closure {
                    Closure::Complete => c_total += c,
                    Closure::Truncated => {
                        let q = w.t().mapv(|v| v.conj()).dot(&w);
                        wsum_q.scaled_add(C64::new(c, 0.0), &q);
                    }
                }
            }
        }
        // Inner disk: W = 1, so WρW† − ½{W†W, ρ} vanishes for either closure.
        match closure {
            Closure::Complete => {
                // W†W = 1 on the rule and in the tail (where WρW† = 0).
                out.scaled_add(C64::new(-(c_total + self.tail), 0.0), rho);
            }
            Closure::Truncated => {
                let anti = wsum_q.dot(rho) + rho.dot(&wsum_q);
                out.scaled_add(C64::new(-0.5, 0.0), &anti);
            }
        }
        Ok(out)
    }

    /// Σ_p Λ_mnpp over every node of the frequency grid (the complete basis),
    /// for modes `rows` of this assembler's basis.
    ///
    /// W_mp(a) for all grid modes p is one FFT of e_m*(x)·e^{−i2πa·x}.
    pub fn complete_contraction(&self, rows: &[usize]) -> Result<Array2<C64>> {
        let g = self.basis.grid;
        let n = g.n_side;
        let fft = Fft2::new(n);
        let zm = match self.frame {
            ModeFrame::Waist => 0.0,
            ModeFrame::CoPropagating => self.z,
        };
        let fields: Vec<Array2<C64>> = rows
            .iter()
            .map(|&m| fft.to_position(&g, &self.basis.spectrum(m, zm, self.wavelength)))
            .collect();
        let xs = g.position_nodes();
        let dx = g.position_spacing();
        let da = g.spacing();
        let r = rows.len();
        let mut out = Array2::<C64>::zeros((r, r));
        let mut buf: Vec<Array2<C64>> = vec![Array2::zeros((n, n)); r];
        for j in 0..self.nodes.rho.len() {
            let c = self.weights[j];
            if c == 0.0 {
                continue;
            }
            for k in 0..self.nodes.phi.len() {
                let (rho, phi) = (self.nodes.rho[j], self.nodes.phi[k]);
                let a = [rho * phi.cos(), rho * phi.sin()];
                let ux: Vec<C64> = xs.iter().map(|x| C64::from_polar(1.0, -2.0 * PI * a[0] * x)).collect();
                let uy: Vec<C64> = xs.iter().map(|y| C64::from_polar(1.0, -2.0 * PI * a[1] * y)).collect();
                for (ri, f) in fields.iter().enumerate() {
                    let b = &mut buf[ri];
                    for ((i, jj), v) in b.indexed_iter_mut() {
                        *v = f[[i, jj]].conj() * ux[i] * uy[jj];
                    }
                    // W_mp = Δa Δx² Σ_x f(x) e^{−i2πa_p·x}; phase factors of p drop out of the sum.
                    fft.forward(b);
                }
                for a_ in 0..r {
                    for b_ in 0..r {
                        let s: C64 = buf[a_].iter().zip(buf[b_].iter()).map(|(x, y)| x * y.conj()).sum();
                        out[[a_, b_]] += s * (c * da * da * dx.powi(4));
                    }
                }
            }
        }
        for a_ in 0..r {
            out[[a_, a_]] += self.disk;
        }
        Ok(out)
    }
}

/// Σ_{k=0}^{n−1} e^{i2πu(k−n/2)Δx}.
fn dirichlet(u: f64, dx: f64, n: usize) -> C64 {
    let t = u * dx;
    let s = (PI * t).sin();
    if s.abs() < 1e-13 {
        return C64::new(n as f64, 0.0);
    }
    C64::from_polar((PI * n as f64 * t).sin() / s, -PI * t)
}

fn build_table(basis: &ModalBasis, wavelength: f64, z: f64, nodes: &PolarNodes) -> Result<OverlapTable> {
    let g = basis.grid;
    match basis.family() {
        BasisFamily::LaguerreGauss => {
            let n = basis.len();
            let ns = g.n_side;
            let fft = Fft2::new(ns);
            let fields = basis.position_fields(z, wavelength, &fft);
            let xs = g.position_nodes();
            let dx = g.position_spacing();
            // column sums S_ab(x) = Σ_y e_a*(x, y) e_b(x, y)
            let mut cols = vec![vec![C64::new(0.0, 0.0); ns]; n * n];
            for a in 0..n {
                for b in 0..n {
                    let c = &mut cols[a * n + b];
                    for i in 0..ns {
                        let mut s = C64::new(0.0, 0.0);
                        for j in 0..ns {
                            s += fields[a][[i, j]].conj() * fields[b][[i, j]];
                        }
                        c[i] = s;
                    }
                }
            }
            let mut w = Vec::with_capacity(nodes.rho.len());
            for &rho in &nodes.rho {
                let ph: Vec<C64> = xs.iter().map(|x| C64::from_polar(dx * dx, -2.0 * PI * rho * x)).collect();
                let m = Array2::from_shape_fn((n, n), |(a, b)| {
                    cols[a * n + b].iter().zip(&ph).map(|(s, p)| s * p).sum::<C64>()
                });
                w.push(m);
            }
            let l = basis.modes.iter().map(|m| m.azimuthal().unwrap_or(0)).collect();
            Ok(OverlapTable::Radial { l, w })
        }
        BasisFamily::Grid => {
            let mut freqs = Vec::new();
            let mut phase = Vec::new();
            for m in &basis.modes {
                if let ModeIndex::Grid { i, j } = *m {
                    let (ax, ay) = (g.node(i), g.node(j));
                    freqs.push([ax, ay]);
                    phase.push(C64::from_polar(1.0, PI * wavelength * z * (ax * ax + ay * ay)));
                }
            }
            Ok(OverlapTable::Grid {
                freqs,
                phase,
                dx: g.position_spacing(),
                n: g.n_side,
            })
        }
    }
}

/// Convenience: assemble a coupling set in one call.
pub fn coupling_tensor(
    basis: &ModalBasis,
    wavelength: f64,
    spec: &TurbulenceSpec,
    quad: &PolarQuadrature,
    frame: ModeFrame,
    z: f64,
) -> Result<CouplingSet> {
    CouplingAssembler::new(basis, wavelength, spec, quad, frame, z)?.coupling_set()
}
