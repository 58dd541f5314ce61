//! State diagnostics: trace, Hermiticity, spectrum, purity, qubit reduction
//! and Wootters concurrence.

use crate::error::{Error, Result};
use crate::modes::{ModalBasis, ModeIndex};
use nalgebra::DMatrix;
use ndarray::{Array2, Array4};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

/// Negative eigenvalues down to this are treated as roundoff by `concurrence`.
pub const POSITIVITY_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub z: f64,
    pub trace: f64,
    pub min_eigenvalue: f64,
    pub purity: f64,
    pub concurrence: Option<f64>,
    pub hermiticity_defect: f64,
}

fn check_finite(m: &Array2<C64>) -> Result<()> {
    if m.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::NonFinite("density matrix entry".into()));
    }
    Ok(())
}

fn to_nalgebra(m: &Array2<C64>) -> DMatrix<C64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]])
}

/// max|ρ − ρ†|.
pub fn hermiticity_defect(m: &Array2<C64>) -> f64 {
    let mut d: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in i..m.ncols() {
            d = d.max((m[[i, j]] - m[[j, i]].conj()).norm());
        }
    }
    d
}

/// Eigen-decomposition of the Hermitian part (ρ + ρ†)/2, eigenvalues ascending.
// H = A + iB as the real symmetric [[A, -B], [B, A]]. Each eigenvalue of H
// appears twice, and f(H) is read back from the blocks of f(embedding).
// nalgebra's complex Hermitian eigenvectors are unreliable, the real path is not.
fn real_embedding(m: &Array2<C64>) -> Result<nalgebra::SymmetricEigen<f64, nalgebra::Dyn>> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!("expected a square matrix, got {:?}", m.dim())));
    }
    check_finite(m)?;
    let n = m.nrows();
    let big = DMatrix::<f64>::from_fn(2 * n, 2 * n, |i, j| {
        // Hermitian part only
        let v = (m[[i % n, j % n]] + m[[j % n, i % n]].conj()) * 0.5;
        match (i < n, j < n) {
            (true, true) | (false, false) => v.re,
            (true, false) => -v.im,
            (false, true) => v.im,
        }
    });
    Ok(big.symmetric_eigen())
}

/// f(H) for the Hermitian part H of `m`, with f applied to the spectrum.
pub fn hermitian_function(m: &Array2<C64>, f: impl Fn(f64) -> f64) -> Result<DMatrix<C64>> {
    let n = m.nrows();
    let eig = real_embedding(m)?;
    let fv = eig.eigenvalues.map(f);
    let v = &eig.eigenvectors;
    let full = v * DMatrix::from_diagonal(&fv) * v.transpose();
    Ok(DMatrix::from_fn(n, n, |i, j| C64::new(full[(i, j)], full[(i + n, j)])))
}

/// Ascending eigenvalues of the Hermitian part of `m`.
pub fn hermitian_eigenvalues(m: &Array2<C64>) -> Result<Vec<f64>> {
    let mut e: Vec<f64> = real_embedding(m)?.eigenvalues.iter().copied().collect();
    e.sort_by(f64::total_cmp);
    Ok(e.into_iter().step_by(2).collect())
}

/// Trace, purity Tr(ρ²), smallest eigenvalue and Hermiticity defect.
pub fn state_metrics(rho: &Array2<C64>, z: f64) -> Result<MetricsRecord> {
    let ev = hermitian_eigenvalues(rho)?;
    let trace = (0..rho.nrows()).map(|i| rho[[i, i]].re).sum();
    // Tr(ρ²) = Σ ρ_ij ρ_ji
    let mut purity = 0.0;
    for i in 0..rho.nrows() {
        for j in 0..rho.ncols() {
            purity += (rho[[i, j]] * rho[[j, i]]).re;
        }
    }
    Ok(MetricsRecord {
        z,
        trace,
        min_eigenvalue: ev.first().copied().unwrap_or(0.0),
        purity,
        concurrence: None,
        hermiticity_defect: hermiticity_defect(rho),
    })
}

/// Two-photon tensor [m, n, p, q] as an N²×N² matrix, row (m, p), column (n, q).
pub fn pair_matrix(rho: &Array4<C64>) -> Array2<C64> {
    let n = rho.dim().0;
    Array2::from_shape_fn((n * n, n * n), |(r, c)| rho[[r / n, c / n, r % n, c % n]])
}

/// Inverse of [`pair_matrix`].
pub fn pair_tensor(m: &Array2<C64>) -> Result<Array4<C64>> {
    let nn = m.nrows();
    let n = (nn as f64).sqrt().round() as usize;
    if n * n != nn || m.ncols() != nn {
        return Err(Error::Dimension(format!("{:?} is not N²×N²", m.dim())));
    }
    Ok(Array4::from_shape_fn((n, n, n, n), |(a, b, c, d)| m[[a * n + c, b * n + d]]))
}

pub fn pair_metrics(rho: &Array4<C64>, z: f64) -> Result<MetricsRecord> {
    state_metrics(&pair_matrix(rho), z)
}

/// Partial trace over photon B.
pub fn trace_out_b(rho: &Array4<C64>) -> Array2<C64> {
    let n = rho.dim().0;
    Array2::from_shape_fn((n, n), |(m, k)| (0..n).map(|p| rho[[m, k, p, p]]).sum())
}

/// Result of projecting both photons onto span{|+ℓ⟩, |−ℓ⟩}.
#[derive(Debug, Clone, PartialEq)]
pub struct QubitReduction {
    /// Renormalized 4×4 state, qubit basis |0⟩ = +ℓ, |1⟩ = −ℓ.
    pub rho: Array2<C64>,
    /// Weight inside the qubit subspace before renormalization.
    pub kept_weight: f64,
    /// 1 − kept weight, for unit-norm input states.
    pub discarded_weight: f64,
}

/// Qubit reduction on given mode indices (plus, minus).
pub fn qubit_reduce_indices(rho: &Array4<C64>, plus: usize, minus: usize) -> Result<QubitReduction> {
    let n = rho.dim().0;
    if plus >= n || minus >= n || plus == minus {
        return Err(Error::Dimension(format!("qubit modes ({plus}, {minus}) invalid for dim {n}")));
    }
    let idx = [plus, minus];
    let mut r = Array2::<C64>::zeros((4, 4));
    for a in 0..2 {
        for b in 0..2 {
            for a2 in 0..2 {
                for b2 in 0..2 {
                    r[[2 * a + b, 2 * a2 + b2]] = rho[[idx[a], idx[a2], idx[b], idx[b2]]];
                }
            }
        }
    }
    let kept: f64 = (0..4).map(|i| r[[i, i]].re).sum();
    if !(kept > 0.0) {
        return Err(Error::InvalidState("no weight left in the qubit subspace".into()));
    }
    r.mapv_inplace(|v| v / kept);
    Ok(QubitReduction {
        rho: r,
        kept_weight: kept,
        discarded_weight: 1.0 - kept,
    })
}

/// Projects each photon onto {LG(0, ℓ), LG(0, −ℓ)} of `basis`.
pub fn qubit_reduce(rho: &Array4<C64>, basis: &ModalBasis, l: i32) -> Result<QubitReduction> {
    if rho.dim().0 != basis.len() {
        return Err(Error::Dimension(format!("state dim {} vs basis {}", rho.dim().0, basis.len())));
    }
    let find = |l| {
        basis
            .index_of(ModeIndex::lg(0, l))
            .ok_or_else(|| Error::InvalidState(format!("basis lacks LG(0, {l})")))
    };
    qubit_reduce_indices(rho, find(l)?, find(-l)?)
}

/// Wootters concurrence of a two-qubit state.
pub fn concurrence(rho4: &Array2<C64>) -> Result<f64> {
    Ok(wootters_margin(rho4)?.clamp(0.0, 1.0))
}

/// λ1 − λ2 − λ3 − λ4 before clamping; negative once entanglement is gone.
pub fn wootters_margin(rho4: &Array2<C64>) -> Result<f64> {
    if rho4.dim() != (4, 4) {
        return Err(Error::Dimension(format!("concurrence needs 4×4, got {:?}", rho4.dim())));
    }
    check_finite(rho4)?;
    let tr: f64 = (0..4).map(|i| rho4[[i, i]].re).sum();
    if (tr - 1.0).abs() > POSITIVITY_TOLERANCE {
        return Err(Error::InvalidState(format!("trace {tr} is not 1")));
    }
    if hermiticity_defect(rho4) > POSITIVITY_TOLERANCE {
        return Err(Error::InvalidState("not Hermitian".into()));
    }
    let ev = hermitian_eigenvalues(rho4)?;
    if ev[0] < -POSITIVITY_TOLERANCE {
        return Err(Error::InvalidState(format!("negative eigenvalue {:.3e}", ev[0])));
    }
    // √ρ from the clamped spectrum
    let sqrt_rho = hermitian_function(rho4, |v| v.max(0.0).sqrt())?;
    // ρ̃ = (σy⊗σy) ρ* (σy⊗σy)
    let yy = DMatrix::from_row_slice(
        4,
        4,
        &[0., 0., 0., -1., 0., 0., 1., 0., 0., 1., 0., 0., -1., 0., 0., 0.].map(|v| C64::new(v, 0.0)),
    );
    let rho_c = to_nalgebra(rho4).map(|v| v.conj());
    let tilde = &yy * rho_c * &yy;
    let r = &sqrt_rho * tilde * &sqrt_rho;
    let r = (&r + r.adjoint()) * C64::new(0.5, 0.0);
    let r = Array2::from_shape_fn((4, 4), |(i, j)| r[(i, j)]);
    let mut l: Vec<f64> = hermitian_eigenvalues(&r)?.iter().map(|v| v.max(0.0).sqrt()).collect();
    l.sort_by(|a, b| b.total_cmp(a));
    Ok(l[0] - l[1] - l[2] - l[3])
}
