//! Sampled frequency plane and its conjugate position grid.
//!
//! Nodes are `a_j = (j − n/2)·Δa` with `Δa = 2·extent/n`; the conjugate
//! position grid has `Δx = 1/(n·Δa)` and nodes `x_k = (k − n/2)·Δx`.
//! Transforms follow `e(x) = ∫G(a) e^{−i2πa·x} d²a` and its inverse.

use crate::error::{Error, Result};
use ndarray::Array2;
use num_complex::Complex64 as C64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    pub n_side: usize,
    /// Largest |a| per axis [cycles/m].
    pub extent: f64,
}

impl FrequencyGrid {
    pub fn new(n_side: usize, extent: f64) -> Result<Self> {
        if n_side < 16 || n_side % 2 != 0 {
            return Err(Error::Domain(format!("n_side must be even and >= 16, got {n_side}")));
        }
        if !(extent > 0.0 && extent.is_finite()) {
            return Err(Error::Domain(format!("grid extent must be > 0, got {extent}")));
        }
        Ok(FrequencyGrid { n_side, extent })
    }

    /// 256 samples, extent 8/(πω0).
    pub fn default_for_waist(waist: f64) -> Result<Self> {
        Self::new(256, 8.0 / (PI * waist))
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.extent / self.n_side as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        (j as f64 - (self.n_side / 2) as f64) * self.spacing()
    }

    pub fn position_spacing(&self) -> f64 {
        1.0 / (self.n_side as f64 * self.spacing())
    }

    pub fn position_node(&self, k: usize) -> f64 {
        (k as f64 - (self.n_side / 2) as f64) * self.position_spacing()
    }

    /// Full width of the position window.
    pub fn window(&self) -> f64 {
        self.n_side as f64 * self.position_spacing()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_side).map(|j| self.node(j)).collect()
    }

    pub fn position_nodes(&self) -> Vec<f64> {
        (0..self.n_side).map(|k| self.position_node(k)).collect()
    }
}

/// 2D FFT on square arrays, in place, with scratch reuse.
pub struct Fft2 {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Fft2({})", self.n)
    }
}

impl Fft2 {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            n,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn run(&self, data: &mut Array2<C64>, inverse: bool) {
        let n = self.n;
        assert_eq!(data.dim(), (n, n));
        let plan = if inverse { &self.inv } else { &self.fwd };
        let slice = data.as_slice_mut().expect("contiguous array");
        plan.process(slice);
        transpose_in_place(slice, n);
        plan.process(slice);
        transpose_in_place(slice, n);
    }

    /// Unnormalized forward transform, native (unshifted) ordering.
    pub fn forward(&self, data: &mut Array2<C64>) {
        self.run(data, false);
    }

    /// Unnormalized inverse transform, native (unshifted) ordering.
    pub fn inverse(&self, data: &mut Array2<C64>) {
        self.run(data, true);
    }

    /// Centered frequency samples G → centered position samples e.
    pub fn to_position(&self, grid: &FrequencyGrid, g: &Array2<C64>) -> Array2<C64> {
        let mut d = g.clone();
        checkerboard(&mut d);
        self.forward(&mut d);
        checkerboard(&mut d);
        let s = grid.spacing();
        d.mapv_inplace(|v| v * (s * s));
        d
    }

    /// Centered position samples e → centered frequency samples G.
    pub fn to_frequency(&self, grid: &FrequencyGrid, e: &Array2<C64>) -> Array2<C64> {
        let mut d = e.clone();
        checkerboard(&mut d);
        self.inverse(&mut d);
        checkerboard(&mut d);
        let s = grid.position_spacing();
        d.mapv_inplace(|v| v * (s * s));
        d
    }
}

fn transpose_in_place(d: &mut [C64], n: usize) {
    for i in 0..n {
        for j in (i + 1)..n {
            d.swap(i * n + j, j * n + i);
        }
    }
}

/// Multiply by (−1)^(i+j). For even n this converts between centered and
/// native FFT ordering on both sides of the transform.
pub fn checkerboard(d: &mut Array2<C64>) {
    for ((i, j), v) in d.indexed_iter_mut() {
        if (i + j) % 2 == 1 {
            *v = -*v;
        }
    }
}

/// Index shift between centered and native ordering (self-inverse for even n).
pub fn shift_index(i: usize, n: usize) -> usize {
    (i + n / 2) % n
}

/// Reorder a centered array into native FFT ordering (or back).
pub fn fftshift<T: Clone>(a: &Array2<T>) -> Array2<T> {
    let n = a.nrows();
    Array2::from_shape_fn(a.dim(), |(i, j)| a[[shift_index(i, n), shift_index(j, n)]].clone())
}
