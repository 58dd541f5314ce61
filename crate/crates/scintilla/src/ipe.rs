//! Infinitesimal propagation equation (IPE) and its Lindblad form, for one
//! photon and for photon pairs, plus a fixed-step RK4 integrator with
//! step-halving convergence control.

use crate::couplings::{CouplingAssembler, CouplingSet, Closure, ModeFrame};
use crate::error::{Error, Result};
use crate::metrics::{self, MetricsRecord};
use ndarray::{Array, Array2, Array4, Dimension, Ix2, Ix4};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::Arc;

const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Single-photon density matrix ρ_mn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityMatrix {
    pub rho: Array2<C64>,
}

impl DensityMatrix {
    /// Checks squareness, finiteness and Hermiticity (1e-10).
    pub fn new(rho: Array2<C64>) -> Result<Self> {
        if rho.nrows() != rho.ncols() {
            return Err(Error::Dimension(format!("ρ must be square, got {:?}", rho.dim())));
        }
        let d = metrics::hermiticity_defect(&rho);
        if !d.is_finite() {
            return Err(Error::NonFinite("density matrix".into()));
        }
        if d > 1e-10 {
            return Err(Error::InvalidState(format!("ρ is not Hermitian (defect {d:.3e})")));
        }
        Ok(DensityMatrix { rho })
    }

    /// |ψ⟩⟨ψ| for a coefficient vector (not renormalized).
    pub fn pure(coeffs: &[C64]) -> Self {
        let n = coeffs.len();
        DensityMatrix {
            rho: Array2::from_shape_fn((n, n), |(m, k)| coeffs[m] * coeffs[k].conj()),
        }
    }

    pub fn dim(&self) -> usize {
        self.rho.nrows()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.rho[[i, i]].re).sum()
    }
}

/// Two-photon density tensor ρ_mnpq: (m, n) ket/bra of photon A, (p, q) of B.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoPhotonDensity {
    pub rho: Array4<C64>,
}

impl TwoPhotonDensity {
    pub fn new(rho: Array4<C64>) -> Result<Self> {
        let (a, b, c, d) = rho.dim();
        if !(a == b && b == c && c == d) {
            return Err(Error::Dimension(format!("ρ must be N×N×N×N, got {:?}", rho.dim())));
        }
        let t = TwoPhotonDensity { rho };
        let h = t.hermiticity_defect();
        if !h.is_finite() {
            return Err(Error::NonFinite("two-photon density".into()));
        }
        if h > 1e-10 {
            return Err(Error::InvalidState(format!("ρ is not Hermitian (defect {h:.3e})")));
        }
        Ok(t)
    }

    /// ρ_mnpq = c_mp c*_nq for a joint amplitude c[A mode, B mode].
    pub fn pure(c: &Array2<C64>) -> Self {
        let n = c.nrows();
        TwoPhotonDensity {
            rho: Array4::from_shape_fn((n, n, n, n), |(m, k, p, q)| c[[m, p]] * c[[k, q]].conj()),
        }
    }

    /// (|a⟩|b⟩ + |b⟩|a⟩)/√2 for mode indices a ≠ b.
    pub fn bell(n: usize, a: usize, b: usize) -> Result<Self> {
        if a >= n || b >= n || a == b {
            return Err(Error::Dimension(format!("Bell modes ({a}, {b}) invalid for dim {n}")));
        }
        let mut c = Array2::<C64>::zeros((n, n));
        let s = std::f64::consts::FRAC_1_SQRT_2;
        c[[a, b]] = C64::new(s, 0.0);
        c[[b, a]] = C64::new(s, 0.0);
        Ok(Self::pure(&c))
    }

    pub fn dim(&self) -> usize {
        self.rho.dim().0
    }

    /// max|ρ_mnpq − ρ*_nmqp|.
    pub fn hermiticity_defect(&self) -> f64 {
        metrics::hermiticity_defect(&metrics::pair_matrix(&self.rho))
    }

    pub fn trace(&self) -> f64 {
        let n = self.dim();
        let mut t = 0.0;
        for m in 0..n {
            for p in 0..n {
                t += self.rho[[m, m, p, p]].re;
            }
        }
        t
    }
}

fn check_dim(rho: &Array2<C64>, n: usize) -> Result<()> {
    if rho.dim() != (n, n) {
        return Err(Error::Dimension(format!("ρ is {:?}, couplings are {n}×{n}", rho.dim())));
    }
    Ok(())
}

/// i[P, ρ].
pub fn commutator_term(p: &Array2<C64>, rho: &Array2<C64>) -> Array2<C64> {
    (p.dot(rho) - rho.dot(p)).mapv(|v| v * I)
}

/// ∂ρ_mn = i P_mx ρ_xn − i ρ_mx P_xn + Λ_mnpq ρ_pq − Λ_T ρ_mn.
pub fn ipe_rhs_single(rho: &Array2<C64>, c: &CouplingSet) -> Result<Array2<C64>> {
    let n = c.dim();
    check_dim(rho, n)?;
    let mut out = commutator_term(&c.p, rho);
    let flat = rho.as_standard_layout();
    let flat = flat.as_slice().expect("standard layout");
    let lam = c.lambda.as_standard_layout();
    let lam = lam.as_slice().expect("standard layout");
    let nn = n * n;
    for mn in 0..nn {
        let row = &lam[mn * nn..(mn + 1) * nn];
        let s: C64 = row.iter().zip(flat).map(|(l, r)| l * r).sum();
        out[[mn / n, mn % n]] += s - rho[[mn / n, mn % n]] * c.lambda_t;
    }
    Ok(out)
}

/// Lindblad form (k²/2)∫Φ1[2WρW† − W†Wρ − ρW†W]d²a + i[P, ρ], W streamed per node.
pub fn lindblad_rhs_single(
    rho: &Array2<C64>,
    assembler: &CouplingAssembler,
    p: Option<&Array2<C64>>,
    closure: Closure,
) -> Result<Array2<C64>> {
    let mut out = assembler.lindblad_dissipator(rho, closure)?;
    if let Some(p) = p {
        check_dim(rho, p.nrows())?;
        out = out + commutator_term(p, rho);
    }
    Ok(out)
}

/// Which photons of a pair cross turbulence, and how the media relate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairMode {
    OneArm,
    UncorrelatedArms,
    CommonMedium,
}

/// Two-photon IPE right-hand side.
pub fn ipe_rhs_two(rho: &Array4<C64>, ca: &CouplingSet, cb: &CouplingSet, mode: PairMode) -> Result<Array4<C64>> {
    let n = ca.dim();
    if cb.dim() != n || rho.dim() != (n, n, n, n) {
        return Err(Error::Dimension(format!(
            "ρ {:?} vs couplings {n} and {}",
            rho.dim(),
            cb.dim()
        )));
    }
    if mode == PairMode::CommonMedium {
        let same = ca.lambda_t == cb.lambda_t && ca.lambda == cb.lambda;
        if !same {
            return Err(Error::InvalidState(
                "a common medium needs identical coupling sets for both photons".into(),
            ));
        }
    }
    let (pa, pb) = (&ca.p, &cb.p);
    let la = &ca.lambda;
    let lb = &cb.lambda;
    let mut out = Array4::<C64>::zeros((n, n, n, n));
    let total_t = match mode {
        PairMode::OneArm => ca.lambda_t,
        PairMode::UncorrelatedArms | PairMode::CommonMedium => ca.lambda_t + cb.lambda_t,
    };
    for m in 0..n {
        for k in 0..n {
            for p in 0..n {
                for q in 0..n {
                    let mut s = C64::new(0.0, 0.0);
                    for x in 0..n {
                        s += I * (pa[[m, x]] * rho[[x, k, p, q]] - rho[[m, x, p, q]] * pa[[x, k]]);
                        s += I * (pb[[p, x]] * rho[[m, k, x, q]] - rho[[m, k, p, x]] * pb[[x, q]]);
                    }
                    for x in 0..n {
                        for y in 0..n {
                            s += la[[m, k, x, y]] * rho[[x, y, p, q]];
                            if mode != PairMode::OneArm {
                                s += lb[[p, q, x, y]] * rho[[m, k, x, y]];
                            }
                            if mode == PairMode::CommonMedium {
                                s += la[[m, q, x, y]] * rho[[x, k, p, y]] + la[[p, k, x, y]] * rho[[m, y, x, q]]
                                    - la[[x, k, q, y]] * rho[[m, y, p, x]]
                                    - la[[m, x, y, p]] * rho[[y, k, x, q]];
                            }
                        }
                    }
                    out[[m, k, p, q]] = s - rho[[m, k, p, q]] * total_t;
                }
            }
        }
    }
    Ok(out)
}

/// A right-hand side ∂ρ/∂z = f(z, ρ) for the integrator.
pub trait Rhs<D: Dimension> {
    fn eval(&mut self, z: f64, rho: &Array<C64, D>) -> Result<Array<C64, D>>;
    /// Largest dissipative rate [1/m]; bounds the default step.
    fn rate(&self) -> f64;
}

/// Fixed couplings, single photon.
pub struct IpeSingle {
    pub couplings: CouplingSet,
    rate: f64,
}

impl IpeSingle {
    pub fn new(couplings: CouplingSet) -> Self {
        let rate = couplings.dissipative_rate();
        IpeSingle { couplings, rate }
    }
}

impl Rhs<Ix2> for IpeSingle {
    fn eval(&mut self, _z: f64, rho: &Array2<C64>) -> Result<Array2<C64>> {
        ipe_rhs_single(rho, &self.couplings)
    }
    fn rate(&self) -> f64 {
        self.rate
    }
}

/// Couplings re-evaluated with modes that diffract along z (cached per z).
pub struct CoPropagatingIpe {
    template: CouplingAssembler,
    cache: HashMap<u64, Arc<CouplingSet>>,
    rate: f64,
}

impl CoPropagatingIpe {
    pub fn new(template: CouplingAssembler) -> Result<Self> {
        let mut s = CoPropagatingIpe {
            template,
            cache: HashMap::new(),
            rate: 0.0,
        };
        s.rate = s.at(0.0)?.dissipative_rate();
        Ok(s)
    }

    /// Coupling set at plane z.
    pub fn at(&mut self, z: f64) -> Result<Arc<CouplingSet>> {
        if let Some(c) = self.cache.get(&z.to_bits()) {
            return Ok(c.clone());
        }
        let t = &self.template;
        let a = CouplingAssembler::new(&t.basis, t.wavelength, &t.spec, &t.quad, ModeFrame::CoPropagating, z)?;
        let c = Arc::new(a.coupling_set()?);
        self.cache.insert(z.to_bits(), c.clone());
        Ok(c)
    }
}

impl Rhs<Ix2> for CoPropagatingIpe {
    fn eval(&mut self, z: f64, rho: &Array2<C64>) -> Result<Array2<C64>> {
        let c = self.at(z)?;
        ipe_rhs_single(rho, &c)
    }
    fn rate(&self) -> f64 {
        self.rate
    }
}

/// Lindblad form at fixed nodes, single photon.
pub struct LindbladSingle {
    pub assembler: CouplingAssembler,
    pub p: Option<Array2<C64>>,
    pub closure: Closure,
    rate: f64,
}

impl LindbladSingle {
    pub fn new(assembler: CouplingAssembler, p: Option<Array2<C64>>, closure: Closure) -> Self {
        // Λ_T bounds the dissipator norm for either closure
        let rate = 2.0 * assembler.lambda_t();
        LindbladSingle {
            assembler,
            p,
            closure,
            rate,
        }
    }
}

impl Rhs<Ix2> for LindbladSingle {
    fn eval(&mut self, _z: f64, rho: &Array2<C64>) -> Result<Array2<C64>> {
        lindblad_rhs_single(rho, &self.assembler, self.p.as_ref(), self.closure)
    }
    fn rate(&self) -> f64 {
        self.rate
    }
}

/// Fixed couplings, photon pair.
pub struct IpePair {
    pub a: CouplingSet,
    pub b: CouplingSet,
    pub mode: PairMode,
    rate: f64,
}

impl IpePair {
    pub fn new(a: CouplingSet, b: CouplingSet, mode: PairMode) -> Self {
        let rate = match mode {
            PairMode::OneArm => a.dissipative_rate(),
            _ => a.dissipative_rate() + b.dissipative_rate(),
        };
        IpePair { a, b, mode, rate }
    }
}

impl Rhs<Ix4> for IpePair {
    fn eval(&mut self, _z: f64, rho: &Array4<C64>) -> Result<Array4<C64>> {
        ipe_rhs_two(rho, &self.a, &self.b, self.mode)
    }
    fn rate(&self) -> f64 {
        self.rate
    }
}

/// Anything the integrator can report metrics for.
pub trait StateView {
    fn metrics(&self, z: f64) -> Result<MetricsRecord>;
}

impl StateView for Array2<C64> {
    fn metrics(&self, z: f64) -> Result<MetricsRecord> {
        metrics::state_metrics(self, z)
    }
}

impl StateView for Array4<C64> {
    fn metrics(&self, z: f64) -> Result<MetricsRecord> {
        metrics::pair_metrics(self, z)
    }
}

/// Step and checkpoint control for [`evolve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepControl {
    /// Initial step [m]. `None`: min(z_R, 1/rate)/50.
    pub step: Option<f64>,
    /// Accept a segment when halving the step changes no entry by more than this.
    pub tolerance: f64,
    pub max_halvings: u32,
    /// Interior checkpoints [m]; the span end is always recorded.
    pub checkpoints: Vec<f64>,
    /// Rayleigh range used by the default step [m].
    pub rayleigh_range: Option<f64>,
    /// Qubit mode indices (plus, minus) for concurrence on pair states.
    pub qubit: Option<(usize, usize)>,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl {
            step: None,
            tolerance: 1e-6,
            max_halvings: 12,
            checkpoints: Vec::new(),
            rayleigh_range: None,
            qubit: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryPoint<S> {
    pub z: f64,
    pub rho: S,
    pub metrics: MetricsRecord,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory<S> {
    pub points: Vec<TrajectoryPoint<S>>,
    /// Finest step actually used [m].
    pub step: f64,
    /// Largest entry change between the last two step sizes, per segment.
    pub convergence: Vec<f64>,
}

impl<S> Trajectory<S> {
    pub fn last(&self) -> &TrajectoryPoint<S> {
        self.points.last().expect("trajectory is never empty")
    }
}

fn default_step(rate: f64, zr: Option<f64>, span: f64) -> f64 {
    let mut scale = span;
    if let Some(zr) = zr {
        scale = scale.min(zr);
    }
    if rate > 0.0 {
        scale = scale.min(1.0 / rate);
    }
    scale / 50.0
}

fn rk4_segment<D, R>(rhs: &mut R, z0: f64, rho: &Array<C64, D>, len: f64, steps: usize) -> Result<Array<C64, D>>
where
    D: Dimension,
    R: Rhs<D> + ?Sized,
{
    let h = len / steps as f64;
    let mut y = rho.clone();
    for s in 0..steps {
        let z = z0 + s as f64 * h;
        let k1 = rhs.eval(z, &y)?;
        let k2 = rhs.eval(z + 0.5 * h, &(&y + &k1.mapv(|v| v * (0.5 * h))))?;
        let k3 = rhs.eval(z + 0.5 * h, &(&y + &k2.mapv(|v| v * (0.5 * h))))?;
        let k4 = rhs.eval(z + h, &(&y + &k3.mapv(|v| v * h)))?;
        y = y + (k1 + k2.mapv(|v| v * 2.0) + k3.mapv(|v| v * 2.0) + k4).mapv(|v| v * (h / 6.0));
        if y.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::NonFinite(format!("state after step to z = {:.6e} m (h = {h:.3e} m)", z + h)));
        }
    }
    Ok(y)
}

fn max_diff<D: Dimension>(a: &Array<C64, D>, b: &Array<C64, D>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// Classical RK4 from z_span.0 to z_span.1. Each segment between
/// checkpoints is integrated with n and 2n steps; n doubles until the two
/// agree within the tolerance, and the finer result is kept.
pub fn evolve<D, R>(rho0: &Array<C64, D>, rhs: &mut R, z_span: (f64, f64), ctl: &StepControl) -> Result<Trajectory<Array<C64, D>>>
where
    D: Dimension,
    R: Rhs<D> + ?Sized,
    Array<C64, D>: StateView,
{
    let (z0, z1) = z_span;
    if !(z0.is_finite() && z1.is_finite() && z1 >= z0) {
        return Err(Error::Domain(format!("bad z span ({z0}, {z1})")));
    }
    if !(ctl.tolerance > 0.0) {
        return Err(Error::Domain("tolerance must be > 0".into()));
    }
    let mut stops: Vec<f64> = ctl.checkpoints.iter().copied().filter(|z| *z > z0 && *z < z1).collect();
    stops.push(z1);
    stops.sort_by(f64::total_cmp);
    stops.dedup();

    let mut h = match ctl.step {
        Some(h) if h > 0.0 => h,
        Some(h) => return Err(Error::Domain(format!("step must be > 0, got {h}"))),
        None => default_step(rhs.rate(), ctl.rayleigh_range, (z1 - z0).max(f64::MIN_POSITIVE)),
    };
    let h_floor = h / 2f64.powi(ctl.max_halvings as i32);

    let record = |z: f64, rho: &Array<C64, D>| -> Result<TrajectoryPoint<Array<C64, D>>> {
        let mut m = rho.metrics(z)?;
        if let (Some((a, b)), Some(r4)) = (ctl.qubit, rho.view().into_dimensionality::<Ix4>().ok()) {
            let red = metrics::qubit_reduce_indices(&r4.to_owned(), a, b)?;
            m.concurrence = Some(metrics::concurrence(&red.rho)?);
        }
        Ok(TrajectoryPoint { z, rho: rho.clone(), metrics: m })
    };

    let mut points = vec![record(z0, rho0)?];
    let mut conv = Vec::new();
    let mut z = z0;
    let mut rho = rho0.clone();
    for &stop in &stops {
        let len = stop - z;
        if len <= 0.0 {
            continue;
        }
        let mut n = (len / h).ceil().max(1.0) as usize;
        let mut coarse = rk4_segment(rhs, z, &rho, len, n)?;
        loop {
            let fine = rk4_segment(rhs, z, &rho, len, 2 * n)?;
            let d = max_diff(&coarse, &fine);
            if d <= ctl.tolerance {
                conv.push(d);
                rho = fine;
                h = len / (2 * n) as f64;
                break;
            }
            n *= 2;
            if len / ((2 * n) as f64) < h_floor {
                return Err(Error::StepUnderflow {
                    z,
                    step: len / (2 * n) as f64,
                    change: d,
                });
            }
            coarse = fine;
        }
        z = stop;
        points.push(record(z, &rho)?);
    }
    Ok(Trajectory { points, step: h, convergence: conv })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::couplings::{coupling_tensor, kinetic_matrix};
    use crate::grid::FrequencyGrid;
    use crate::modes::ModalBasis;
    use crate::quadrature::PolarQuadrature;
    use crate::turbulence::TurbulenceSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    const LAMBDA: f64 = 633e-9;
    const W0: f64 = 0.01;

    fn basis(order: u32) -> ModalBasis {
        let g = FrequencyGrid::new(64, 8.0 / (PI * W0)).unwrap();
        ModalBasis::lg_up_to_order(order, W0, g).unwrap()
    }

    pub(crate) fn random_hermitian(n: usize, rng: &mut ChaCha8Rng) -> Array2<C64> {
        let a = Array2::from_shape_fn((n, n), |_| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5));
        let h = &a + &a.t().mapv(|v| v.conj());
        let tr: f64 = (0..n).map(|i| h[[i, i]].re).sum();
        h.mapv(|v| v / tr)
    }

    fn couplings() -> CouplingSet {
        let s = TurbulenceSpec::von_karman(1e-13, 50.0).unwrap();
        coupling_tensor(&basis(2), LAMBDA, &s, &PolarQuadrature::default(), ModeFrame::Waist, 0.0).unwrap()
    }

    #[test]
    fn unitary_rhs_is_traceless_commutator() {
        let b = basis(2);
        let p = kinetic_matrix(&b, 2.0 * PI / LAMBDA).unwrap();
        let c = CouplingSet::unitary(p.clone(), couplings().provenance);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rho = random_hermitian(6, &mut rng);
        let r = ipe_rhs_single(&rho, &c).unwrap();
        let tr: C64 = (0..6).map(|i| r[[i, i]]).sum();
        assert!(tr.norm() < 1e-12 * p[[0, 0]].norm());
        assert_eq!(r, commutator_term(&p, &rho));
    }

    #[test]
    fn rhs_preserves_hermiticity_and_is_linear() {
        let c = couplings();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (r1, r2) = (random_hermitian(6, &mut rng), random_hermitian(6, &mut rng));
        let d1 = ipe_rhs_single(&r1, &c).unwrap();
        assert!(metrics::hermiticity_defect(&d1) < 1e-10 * c.lambda_t);
        let mix = ipe_rhs_single(&(&r1 * C64::new(0.3, 0.0) + &r2 * C64::new(-1.7, 0.0)), &c).unwrap();
        let lin = d1 * C64::new(0.3, 0.0) + ipe_rhs_single(&r2, &c).unwrap() * C64::new(-1.7, 0.0);
        assert!(max_diff(&mix, &lin) < 1e-12 * c.lambda_t);
    }

    #[test]
    fn lindblad_matches_ipe() {
        let s = TurbulenceSpec::von_karman(1e-13, 50.0).unwrap();
        let asm = CouplingAssembler::new(&basis(2), LAMBDA, &s, &PolarQuadrature::default(), ModeFrame::Waist, 0.0).unwrap();
        let c = asm.coupling_set().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..3 {
            let rho = random_hermitian(6, &mut rng);
            let a = ipe_rhs_single(&rho, &c).unwrap();
            let b = lindblad_rhs_single(&rho, &asm, Some(&c.p), Closure::Complete).unwrap();
            assert!(max_diff(&a, &b) < 1e-8, "{}", max_diff(&a, &b));
        }
    }

    #[test]
    fn truncated_closure_preserves_trace() {
        let s = TurbulenceSpec::von_karman(1e-13, 50.0).unwrap();
        let asm = CouplingAssembler::new(&basis(1), LAMBDA, &s, &PolarQuadrature::default(), ModeFrame::Waist, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rho = random_hermitian(3, &mut rng);
        let d = lindblad_rhs_single(&rho, &asm, None, Closure::Truncated).unwrap();
        let tr: C64 = (0..3).map(|i| d[[i, i]]).sum();
        assert!(tr.norm() < 1e-10 * asm.lambda_t());
    }

    #[test]
    fn pair_rhs_one_arm_is_local() {
        let c = couplings();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (ra, rb) = (random_hermitian(6, &mut rng), random_hermitian(6, &mut rng));
        let prod = Array4::from_shape_fn((6, 6, 6, 6), |(m, k, p, q)| ra[[m, k]] * rb[[p, q]]);
        let d = ipe_rhs_two(&prod, &c, &c, PairMode::OneArm).unwrap();
        let reduced = metrics::trace_out_b(&d);
        let single = ipe_rhs_single(&ra, &c).unwrap();
        assert!(max_diff(&reduced, &single) < 1e-10 * c.lambda_t);
    }

    #[test]
    fn pair_rhs_hermiticity() {
        let c = couplings();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let h = random_hermitian(36, &mut rng);
        let rho = metrics::pair_tensor(&h).unwrap();
        for mode in [PairMode::OneArm, PairMode::UncorrelatedArms, PairMode::CommonMedium] {
            let d = ipe_rhs_two(&rho, &c, &c, mode).unwrap();
            let defect = metrics::hermiticity_defect(&metrics::pair_matrix(&d));
            assert!(defect < 1e-10 * c.lambda_t, "{mode:?}: {defect}");
        }
    }

    #[test]
    fn unitary_evolution_is_isospectral() {
        let b = basis(2);
        let p = kinetic_matrix(&b, 2.0 * PI / LAMBDA).unwrap();
        let mut rhs = IpeSingle::new(CouplingSet::unitary(p, couplings().provenance));
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_hermitian(6, &mut rng);
        let rho0 = a.dot(&a.t().mapv(|v| v.conj()));
        let zr = PI * W0 * W0 / LAMBDA;
        let ctl = StepControl { rayleigh_range: Some(zr), ..Default::default() };
        let t = evolve(&rho0, &mut rhs, (0.0, 2.0 * zr), &ctl).unwrap();
        let e0 = metrics::hermitian_eigenvalues(&rho0).unwrap();
        let e1 = metrics::hermitian_eigenvalues(&t.last().rho).unwrap();
        for (x, y) in e0.iter().zip(&e1) {
            assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn rk4_converges_at_fourth_order() {
        struct Decay;
        impl Rhs<Ix2> for Decay {
            fn eval(&mut self, _z: f64, r: &Array2<C64>) -> Result<Array2<C64>> {
                Ok(r.mapv(|v| -v))
            }
            fn rate(&self) -> f64 {
                1.0
            }
        }
        let r0 = Array2::from_elem((1, 1), C64::new(1.0, 0.0));
        let e1 = (rk4_segment(&mut Decay, 0.0, &r0, 1.0, 10).unwrap()[[0, 0]].re - (-1f64).exp()).abs();
        let e2 = (rk4_segment(&mut Decay, 0.0, &r0, 1.0, 20).unwrap()[[0, 0]].re - (-1f64).exp()).abs();
        assert!((e1 / e2 - 16.0).abs() < 1.0, "{}", e1 / e2);
    }

    #[test]
    fn nan_aborts() {
        struct Bad;
        impl Rhs<Ix2> for Bad {
            fn eval(&mut self, _z: f64, r: &Array2<C64>) -> Result<Array2<C64>> {
                Ok(r.mapv(|_| C64::new(f64::NAN, 0.0)))
            }
            fn rate(&self) -> f64 {
                1.0
            }
        }
        let r0 = Array2::from_elem((1, 1), C64::new(1.0, 0.0));
        let e = evolve(&r0, &mut Bad, (0.0, 1.0), &StepControl::default());
        assert!(matches!(e, Err(Error::NonFinite(_))));
    }
}
