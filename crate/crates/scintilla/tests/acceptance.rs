//! Acceptance run: one line per criterion.
//!
//! Exits 0 so that `cargo test` reports the run without aborting the
//! workspace; set SCINTILLA_ACCEPTANCE_STRICT=1 to exit 1 on any failure.

use ndarray::{Array2, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scintilla::couplings::{kinetic_matrix, Closure, CouplingAssembler, ModeFrame};
use scintilla::grid::FrequencyGrid;
use scintilla::ipe::{
    evolve, ipe_rhs_single, lindblad_rhs_single, CoPropagatingIpe, DensityMatrix, IpePair, IpeSingle, PairMode,
    StepControl, TwoPhotonDensity,
};
use scintilla::mc::{
    agreement_fractions, auto_subharmonic_levels, compare_elements, empirical_structure_function,
    ensemble_density_matrix, phase_average_scaled, screen_ensemble, target_structure_function, EnsembleConfig,
    ScreenGenerator, ScreenGrid,
};
use scintilla::metrics::{concurrence, hermitian_eigenvalues};
use scintilla::modes::{ModalBasis, ModeIndex};
use scintilla::quadrature::PolarQuadrature;
use scintilla::single_screen::{concurrence_curve, linspace, spss_pair_density, PairArms, SpssOptions};
use scintilla::turbulence::{
    cn2_for_rytov, fried_parameter, rytov_from_beam, rytov_variance, OpticalParams, StructureKind, TurbulenceSpec,
};
use scintilla::{Result, C64};
use std::f64::consts::PI;
use std::time::Instant;

const LAMBDA: f64 = 633e-9;
const W0: f64 = 0.01;
const POSITIVITY: f64 = -1e-6;

struct Outcome {
    pass: bool,
    detail: String,
}

/// Smallest eigenvalue seen in every weak-turbulence run, by label.
#[derive(Default)]
struct Shared {
    min_eigs: Vec<(String, f64)>,
}

impl Shared {
    fn record(&mut self, label: &str, rho: &Array2<C64>) -> Result<()> {
        let e = hermitian_eigenvalues(rho)?[0];
        self.min_eigs.push((label.to_string(), e));
        Ok(())
    }
}

fn grid() -> FrequencyGrid {
    FrequencyGrid::new(128, 8.0 / (PI * W0)).unwrap()
}

fn random_state(n: usize, rng: &mut ChaCha8Rng) -> Array2<C64> {
    let a = Array2::from_shape_fn((n, n), |_| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5));
    let rho = a.dot(&a.t().mapv(|v| v.conj()));
    let tr: f64 = (0..n).map(|i| rho[[i, i]].re).sum();
    rho / C64::new(tr, 0.0)
}

fn max_abs(a: &Array2<C64>) -> f64 {
    a.iter().map(|v| v.norm()).fold(0.0, f64::max)
}

// rho[a, a', b, b'] as a matrix on (a b), (a' b')
fn flatten(r: &Array4<C64>) -> Array2<C64> {
    let n = r.dim().0;
    Array2::from_shape_fn((n * n, n * n), |(i, j)| r[[i / n, j / n, i % n, j % n]])
}

fn trace(a: &Array2<C64>) -> f64 {
    (0..a.nrows()).map(|i| a[[i, i]].re).sum()
}

fn c1_crossing_l1(_: &mut Shared) -> Result<Outcome> {
    let c = concurrence_curve(1, &linspace(0.0, 2.0, 41), StructureKind::Quadratic, PairArms::BothArms, SpssOptions::default())?;
    let x = c.crossing;
    Ok(Outcome {
        pass: x.is_some_and(|x| (0.8..=1.2).contains(&x)),
        detail: format!("l=1 crossing at w0/r0 = {}", x.map_or("none".into(), |x| format!("{x:.4}"))),
    })
}

fn c2_crossing_order(_: &mut Shared) -> Result<Outcome> {
    let ws = linspace(0.0, 2.0, 41);
    let mut xs = Vec::new();
    for l in 1..=3 {
        xs.push(concurrence_curve(l, &ws, StructureKind::Quadratic, PairArms::BothArms, SpssOptions::default())?.crossing);
    }
    let pass = match xs[..] {
        [Some(a), Some(b), Some(c)] => a < b && b < c,
        _ => false,
    };
    let show: Vec<String> = xs.iter().map(|x| x.map_or("none".into(), |x| format!("{x:.4}"))).collect();
    Ok(Outcome {
        pass,
        detail: format!("crossings l=1,2,3: {}", show.join(", ")),
    })
}

fn c3_lindblad_equals_ipe(_: &mut Shared) -> Result<Outcome> {
    let spec = TurbulenceSpec::von_karman(1e-14, 50.0)?;
    let basis = ModalBasis::lg_first(6, W0, FrequencyGrid::new(64, 8.0 / (PI * W0))?)?;
    let asm = CouplingAssembler::new(&basis, LAMBDA, &spec, &PolarQuadrature::default(), ModeFrame::Waist, 0.0)?;
    let set = asm.coupling_set()?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for _ in 0..20 {
        let rho = random_state(6, &mut rng);
        let a = ipe_rhs_single(&rho, &set)?;
        let b = lindblad_rhs_single(&rho, &asm, Some(&set.p), Closure::Complete)?;
        worst = worst.max(max_abs(&(&a - &b)));
        scale = scale.max(max_abs(&a));
    }
    Ok(Outcome {
        pass: worst < 1e-8,
        detail: format!("max |Lindblad - IPE| = {worst:.2e} over 20 states (rhs scale {scale:.2e} 1/m)"),
    })
}

fn c4_contraction(_: &mut Shared) -> Result<Outcome> {
    let spec = TurbulenceSpec::von_karman(1e-14, 50.0)?;
    let quad = PolarQuadrature::default();
    let g = FrequencyGrid::new(64, 8.0 / (PI * W0))?;
    let patch = ModalBasis::grid_patch(1, W0, g)?;
    let asm = CouplingAssembler::new(&patch, LAMBDA, &spec, &quad, ModeFrame::Waist, 0.0)?;
    let rows: Vec<usize> = (0..patch.len()).collect();
    let s = asm.complete_contraction(&rows)?;
    let lt = asm.lambda_t();
    let grid_defect = (0..rows.len())
        .flat_map(|m| (0..rows.len()).map(move |n| (m, n)))
        .map(|(m, n)| (s[[m, n]] - if m == n { C64::new(lt, 0.0) } else { C64::new(0.0, 0.0) }).norm() / lt)
        .fold(0.0, f64::max);
    let mut defects = Vec::new();
    for n in [3, 6, 10] {
        let b = ModalBasis::lg_first(n, W0, g)?;
        let set = CouplingAssembler::new(&b, LAMBDA, &spec, &quad, ModeFrame::Waist, 0.0)?.coupling_set()?;
        defects.push(set.contraction_defect(&[0, 1, 2]));
    }
    let monotone = defects.windows(2).all(|w| w[1] < w[0]);
    Ok(Outcome {
        pass: grid_defect < 1e-3 && monotone,
        detail: format!(
            "grid-basis defect {grid_defect:.2e}; LG N=3,6,10 defects {:.3e}, {:.3e}, {:.3e}",
            defects[0], defects[1], defects[2]
        ),
    })
}

fn c5_ipe_vs_mc(sh: &mut Shared) -> Result<Outcome> {
    let optics = OpticalParams::new(LAMBDA, W0)?;
    let k = optics.wavenumber();
    let zr = optics.rayleigh_range();
    let z = 0.5 * zr;
    let cn2 = cn2_for_rytov(0.1, k, z)?;
    let spec = TurbulenceSpec::von_karman(cn2, 50.0)?;
    let b6 = ModalBasis::lg_first(6, W0, grid())?;
    let b15 = ModalBasis::lg_up_to_order(4, W0, grid())?;
    let coeffs = |b: &ModalBasis| {
        let mut c = vec![C64::new(0.0, 0.0); b.len()];
        c[b.index_of(ModeIndex::lg(0, 1)).unwrap()] = C64::new(0.5f64.sqrt(), 0.0);
        c[b.index_of(ModeIndex::lg(0, -1)).unwrap()] = C64::new(0.0, 0.5f64.sqrt());
        c
    };
    let ipe = |b: &ModalBasis| -> Result<Array2<C64>> {
        let asm = CouplingAssembler::new(b, LAMBDA, &spec, &PolarQuadrature::default(), ModeFrame::CoPropagating, 0.0)?;
        let mut rhs = CoPropagatingIpe::new(asm)?;
        let ctl = StepControl { rayleigh_range: Some(zr), ..Default::default() };
        Ok(evolve(&DensityMatrix::pure(&coeffs(b)).rho, &mut rhs, (0.0, z), &ctl)?.last().rho.clone())
    };
    let c6 = coeffs(&b6);
    let psi0 = b6.synthesize(&c6, 0.0, LAMBDA)?;
    let cfg = EnsembleConfig { n_trials: 4000, master_seed: 42, n_screens: 10, ..Default::default() };
    let mc = ensemble_density_matrix(&psi0, &b6, &spec, LAMBDA, z, &cfg)?;

    let r6 = ipe(&b6)?;
    sh.record("ipe 6-mode, z = z_R/2", &r6)?;
    let cmp = compare_elements(&r6, &mc)?;
    let (w2, w3) = agreement_fractions(&cmp);
    let worst = cmp.iter().map(|e| e.z.abs()).fold(0.0, f64::max);

    // the same 6x6 block from a basis large enough to hold the scattered power
    let r15 = ipe(&b15)?;
    sh.record("ipe 15-mode, z = z_R/2", &r15)?;
    let idx: Vec<usize> = b6.modes.iter().map(|m| b15.index_of(*m).unwrap()).collect();
    let block = Array2::from_shape_fn((6, 6), |(i, j)| r15[[idx[i], idx[j]]]);
    let cmp15 = compare_elements(&block, &mc)?;
    let (v2, v3) = agreement_fractions(&cmp15);
    let worst15 = cmp15.iter().map(|e| e.z.abs()).fold(0.0, f64::max);

    Ok(Outcome {
        pass: w2 >= 0.95 && w3 == 1.0,
        detail: format!(
            "6-mode IPE vs MC (4000 trials): {:.1}% within 2 SE, {:.1}% within 3 SE, max |z| {worst:.2}; \
             15-mode IPE on the same block: {:.1}% / {:.1}%, max |z| {worst15:.2}; MC trace {:.4}",
            100.0 * w2,
            100.0 * w3,
            100.0 * v2,
            100.0 * v3,
            mc.trace
        ),
    })
}

fn c6_phase_average(_: &mut Shared) -> Result<Outcome> {
    let k = 2.0 * PI / LAMBDA;
    let spec = TurbulenceSpec::von_karman(1e-14, 50.0)?;
    let grid = ScreenGrid::new(256, 1e-3)?;
    let gen = ScreenGenerator::new(grid, &spec, k, 100.0, auto_subharmonic_levels(&grid, &spec))?;
    let rows = phase_average_scaled(&gen, 16, &[0.5, 1.0, 2.0, 4.0], 0.5, 5000, 6)?;
    let errs: Vec<f64> = rows.iter().map(|r| (r.empirical.re - r.expected).abs() / r.expected).collect();
    let worst = errs.iter().copied().fold(0.0, f64::max);
    let show: Vec<String> = rows
        .iter()
        .zip(&errs)
        .map(|(r, e)| format!("D={} {:.4}/{:.4} ({:.1}%)", r.structure_function, r.empirical.re, r.expected, 100.0 * e))
        .collect();
    Ok(Outcome {
        pass: worst < 0.05,
        detail: show.join("; "),
    })
}

fn c7_screen_fidelity(_: &mut Shared) -> Result<Outcome> {
    let k = 2.0 * PI / LAMBDA;
    let spec = TurbulenceSpec::kolmogorov(1e-14)?;
    let grid = ScreenGrid::new(256, 1e-3)?;
    let levels = auto_subharmonic_levels(&grid, &spec);
    let gen = ScreenGenerator::new(grid, &spec, k, 100.0, levels)?;
    let screens = screen_ensemble(&gen, 7, 500);
    let seps = [4, 8, 16, 32, 64];
    let emp = empirical_structure_function(&screens, &seps);
    let mut worst: f64 = 0.0;
    for (s, e) in seps.iter().zip(&emp) {
        let d = target_structure_function(&spec, k, 100.0, *s as f64 * grid.dx)?;
        worst = worst.max((e / d - 1.0).abs());
    }
    Ok(Outcome {
        pass: worst < 0.10,
        detail: format!("500 screens, {levels} subharmonic levels, 4..64 px: worst |D_emp/D - 1| = {:.2}%", 100.0 * worst),
    })
}

fn c8_closed_forms(_: &mut Shared) -> Result<Outcome> {
    let (cn2, z) = (1e-14, 1000.0);
    let k = 2.0 * PI / LAMBDA;
    let rel = |a: f64, b: f64| ((a - b) / b).abs();
    let r0 = fried_parameter(cn2, LAMBDA, z)?;
    let e_r0 = rel(r0, 0.185 * (LAMBDA * LAMBDA / (cn2 * z)).powf(0.6));
    let s2 = rytov_variance(cn2, k, z)?;
    let e_s2 = rel(s2, 1.23 * cn2 * k.powf(7.0 / 6.0) * z.powf(11.0 / 6.0));
    let optics = OpticalParams::new(LAMBDA, W0)?;
    let e_beam = rel(rytov_from_beam(z / optics.rayleigh_range(), W0 / r0), s2);
    let p = kinetic_matrix(&ModalBasis::lg_first(3, W0, grid())?, k)?;
    let e_p = rel(p[[0, 0]].re, 1.0 / (k * W0 * W0));
    let mut e_w: f64 = 0.0;
    for pw in [0.0, 0.2, 1.0 / 3.0, 0.5, 0.8, 1.0] {
        // p |Φ+⟩⟨Φ+| + (1 − p) I/4
        let rho = Array2::from_shape_fn((4, 4), |(i, j)| {
            let bell = if (i == 0 || i == 3) && (j == 0 || j == 3) { 0.5 * pw } else { 0.0 };
            C64::new(bell + if i == j { 0.25 * (1.0 - pw) } else { 0.0 }, 0.0)
        });
        e_w = e_w.max((concurrence(&rho)? - (0.5 * (3.0 * pw - 1.0)).max(0.0)).abs());
    }
    let worst = [e_r0, e_s2, e_beam, e_p, e_w].into_iter().fold(0.0, f64::max);
    Ok(Outcome {
        pass: worst < 1e-6,
        detail: format!(
            "r0 {e_r0:.1e}, sigma_R^2 {e_s2:.1e}, beam form {e_beam:.1e}, P_00 {e_p:.1e}, Werner {e_w:.1e}"
        ),
    })
}

fn c9_free_space(_: &mut Shared) -> Result<Outcome> {
    let optics = OpticalParams::new(LAMBDA, W0)?;
    let zr = optics.rayleigh_range();
    let basis = ModalBasis::lg_first(6, W0, grid())?;
    let spec = TurbulenceSpec::von_karman(0.0, 50.0)?;
    let set = CouplingAssembler::new(&basis, LAMBDA, &spec, &PolarQuadrature::default(), ModeFrame::Waist, 0.0)?.coupling_set()?;
    let rho0 = random_state(6, &mut ChaCha8Rng::seed_from_u64(9));
    let mut rhs = IpeSingle::new(set);
    let ctl = StepControl { rayleigh_range: Some(zr), ..Default::default() };
    let out = evolve(&rho0, &mut rhs, (0.0, 2.0 * zr), &ctl)?.last().rho.clone();
    let e0 = hermitian_eigenvalues(&rho0)?;
    let e1 = hermitian_eigenvalues(&out)?;
    let drift = e0.iter().zip(&e1).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let dtr = (trace(&out) - trace(&rho0)).abs();
    Ok(Outcome {
        pass: drift < 1e-8 && dtr < 1e-12,
        detail: format!("Cn2 = 0 over 2 z_R: eigenvalue drift {drift:.2e}, trace change {dtr:.2e}"),
    })
}

fn c10_trace_and_positivity(sh: &mut Shared) -> Result<Outcome> {
    let optics = OpticalParams::new(LAMBDA, W0)?;
    let zr = optics.rayleigh_range();
    let k = optics.wavenumber();
    let cn2 = cn2_for_rytov(0.1, k, zr)?;
    let spec = TurbulenceSpec::von_karman(cn2, 50.0)?;
    let basis = ModalBasis::lg_first(6, W0, grid())?;
    let set = CouplingAssembler::new(&basis, LAMBDA, &spec, &PolarQuadrature::default(), ModeFrame::Waist, 0.0)?.coupling_set()?;
    let ctl = StepControl { rayleigh_range: Some(zr), ..Default::default() };

    let mut c = vec![C64::new(0.0, 0.0); 6];
    c[0] = C64::new(1.0, 0.0);
    let single = evolve(&DensityMatrix::pure(&c).rho, &mut IpeSingle::new(set.clone()), (0.0, zr), &ctl)?;
    for p in &single.points {
        sh.record(&format!("ipe 6-mode LG00, z = {:.0} m", p.z), &p.rho)?;
    }
    let drift = 1.0 - trace(&single.last().rho);

    // entangled pair in the l = +-1 modes
    let (a, b) = (basis.index_of(ModeIndex::lg(0, 1)).unwrap(), basis.index_of(ModeIndex::lg(0, -1)).unwrap());
    let pair0 = TwoPhotonDensity::bell(6, a, b)?;
    let mut rhs = IpePair::new(set.clone(), set, PairMode::UncorrelatedArms);
    let pair: Array4<C64> = evolve(&pair0.rho, &mut rhs, (0.0, 0.5 * zr), &ctl)?.last().rho.clone();
    sh.record("ipe pair, z = z_R/2", &flatten(&pair))?;

    let qubit = ModalBasis::new(vec![ModeIndex::lg(0, 1), ModeIndex::lg(0, -1)], 1.0, FrequencyGrid::default_for_waist(1.0)?)?;
    for w in [0.3, 0.6] {
        let out = spss_pair_density(&TwoPhotonDensity::bell(2, 0, 1)?, &qubit, w, StructureKind::Quadratic, PairArms::BothArms, SpssOptions::default())?;
        sh.record(&format!("single-screen pair, w0/r0 = {w}"), &flatten(&out.rho))?;
    }

    let (label, worst) = sh
        .min_eigs
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(l, v)| (l.clone(), *v))
        .unwrap_or_default();
    Ok(Outcome {
        pass: drift.abs() > 1e-6 && worst >= POSITIVITY,
        detail: format!(
            "truncated 6-mode trace drift over z_R: {drift:.3e}; min eigenvalue {worst:.2e} ({label}) across {} runs",
            sh.min_eigs.len()
        ),
    })
}

type Criterion = fn(&mut Shared) -> Result<Outcome>;

fn main() {
    let criteria: [(&str, Criterion); 10] = [
        ("concurrence crossing, l = 1", c1_crossing_l1),
        ("crossing order in l", c2_crossing_order),
        ("Lindblad equals IPE", c3_lindblad_equals_ipe),
        ("coupling contraction", c4_contraction),
        ("IPE against Monte Carlo", c5_ipe_vs_mc),
        ("phase-average law", c6_phase_average),
        ("screen structure function", c7_screen_fidelity),
        ("closed forms", c8_closed_forms),
        ("free-space unitarity", c9_free_space),
        ("trace drift and positivity", c10_trace_and_positivity),
    ];
    let mut shared = Shared::default();
    let mut passed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let (ok, detail) = match f(&mut shared) {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        passed += ok as usize;
        println!(
            "criterion {:>2} {:<28} {} [{:.1} s] {}",
            i + 1,
            name,
            if ok { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64(),
            detail
        );
    }
    println!("acceptance: {passed}/{} passed", criteria.len());
    let strict = std::env::var("SCINTILLA_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && passed < criteria.len() {
        std::process::exit(1);
    }
}
