//! Dispatch of one scenario to the library, writing tables, matrices and a
//! manifest into the output directory.

use crate::config::{Check, Equation, RunKind, ScenarioConfig, StateSection};
use crate::couplings::{CouplingAssembler, CouplingSet, ModeFrame};
use crate::error::{Error, Result};
use crate::io::{complex_json, CouplingCache, CsvTable, OutputDir, RunManifest};
use crate::ipe::{evolve, CoPropagatingIpe, DensityMatrix, IpePair, IpeSingle, LindbladSingle, Rhs, StepControl, TwoPhotonDensity};
use crate::mc::{agreement_fractions, compare_elements, ensemble_density_matrix, EnsembleConfig, EnsembleResult, SuperGaussianMask};
use crate::metrics::{self, MetricsRecord};
use crate::modes::{ModalBasis, ModeIndex};
use crate::quadrature::PolarQuadrature;
use crate::single_screen::{concurrence_curve, linspace, spss_mc_oracle, InputState, SingleScreenChannel};
use crate::turbulence::regime_diagram_data;
use crate::C64;
use ndarray::{Array, Array2, Dimension, Ix2};
use serde_json::{json, Map, Value};
use std::path::PathBuf;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

/// Per-invocation settings that do not belong in the scenario file.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub kind: RunKind,
    pub out_dir: PathBuf,
    pub cache_dir: Option<PathBuf>,
    /// Overrides the config seed.
    pub seed: Option<u64>,
    /// SHA-256 of the config file bytes.
    pub config_sha256: String,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    /// True if any violated check is configured as fatal.
    pub fatal: bool,
}

struct Run<'a> {
    cfg: &'a ScenarioConfig,
    ctx: &'a RunContext,
    out: OutputDir,
    seed: u64,
    violations: Vec<(Check, String)>,
    summary: Map<String, Value>,
}

const POSITIVITY_LIMIT: f64 = -1e-6;
const TRACE_LIMIT: f64 = 1.0 + 1e-6;

/// Runs `ctx.kind` on `cfg`; writes `manifest.json` last.
pub fn run_scenario(cfg: &ScenarioConfig, ctx: &RunContext) -> Result<RunOutcome> {
    let started = Instant::now();
    let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let mut run = Run {
        cfg,
        ctx,
        out: OutputDir::new(&ctx.out_dir)?,
        seed: ctx.seed.unwrap_or(cfg.seed),
        violations: Vec::new(),
        summary: Map::new(),
    };
    match ctx.kind {
        RunKind::Regime => run.regime()?,
        RunKind::SingleScreen => run.single_screen()?,
        RunKind::Couplings => run.couplings()?,
        RunKind::Evolve => run.evolve()?,
        RunKind::Mc => run.mc()?,
        RunKind::Compare => run.compare()?,
        RunKind::ConcurrenceCurve => run.concurrence_curve()?,
    }
    let fatal = run.violations.iter().any(|(c, _)| cfg.output.fatal.contains(c));
    let manifest = RunManifest {
        run: ctx.kind.name().to_string(),
        config_sha256: ctx.config_sha256.clone(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        master_seed: run.seed,
        started_unix,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        outputs: run.out.records.clone(),
        violations: run.violations.iter().map(|(_, m)| m.clone()).collect(),
        summary: run.summary,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    crate::io::atomic_write(&ctx.out_dir.join("manifest.json"), text.as_bytes())?;
    Ok(RunOutcome { manifest, fatal })
}

fn metrics_header(elements: &[[usize; 2]], concurrence: bool) -> Vec<String> {
    let mut h = vec!["z".to_string()];
    for [m, n] in elements {
        h.push(format!("re_rho_{m}_{n}"));
        h.push(format!("im_rho_{m}_{n}"));
    }
    h.extend(["trace", "min_eigenvalue", "purity", "hermiticity_defect"].map(String::from));
    if concurrence {
        h.push("concurrence".into());
    }
    h
}

fn metrics_row(m: &Array2<C64>, rec: &MetricsRecord, elements: &[[usize; 2]], concurrence: bool) -> Vec<f64> {
    let mut r = vec![rec.z];
    for [i, j] in elements {
        let v = m[[*i, *j]];
        r.push(v.re);
        r.push(v.im);
    }
    r.extend([rec.trace, rec.min_eigenvalue, rec.purity, rec.hermiticity_defect]);
    if concurrence {
        r.push(rec.concurrence.unwrap_or(f64::NAN));
    }
    r
}

impl Run<'_> {
    fn check(&mut self, rec: &MetricsRecord, what: &str) {
        if rec.min_eigenvalue < POSITIVITY_LIMIT {
            self.violations.push((
                Check::Positivity,
                format!("{what}: min eigenvalue {:.3e} at z = {:.6e} m", rec.min_eigenvalue, rec.z),
            ));
        }
        if rec.trace > TRACE_LIMIT {
            self.violations
                .push((Check::TraceBound, format!("{what}: trace {:.9} at z = {:.6e} m", rec.trace, rec.z)));
        }
    }

    fn elements(&self, dim: usize) -> Result<Vec<[usize; 2]>> {
        let e = &self.cfg.output.elements;
        if e.is_empty() {
            return Ok((0..dim).map(|i| [i, i]).collect());
        }
        if let Some(bad) = e.iter().find(|[m, n]| *m >= dim || *n >= dim) {
            return Err(Error::config("output.elements", format!("{bad:?} outside a {dim}×{dim} matrix")));
        }
        Ok(e.clone())
    }

    fn basis_json(basis: &ModalBasis) -> Value {
        json!(basis.modes.iter().map(|m| m.to_string()).collect::<Vec<_>>())
    }

    fn regime(&mut self) -> Result<()> {
        let r = &self.cfg.regime;
        let lines = self.cfg.regime_cn2_lines()?;
        let d = regime_diagram_data(&lines, &self.cfg.optics()?, (r.t_min, r.t_max), r.n_points)
            .map_err(|e| Error::config("regime", e.to_string()))?;
        let mut header = vec!["t".to_string()];
        header.extend(lines.iter().map(|c| format!("rytov_cn2_{c:e}")));
        header.extend(["gaussian_boundary", "plane_wave_boundary", "unit_ratio_line"].map(String::from));
        let mut t = CsvTable::new(header);
        for i in 0..d.t.len() {
            let mut row = vec![d.t[i]];
            row.extend(d.rytov.iter().map(|c| c[i]));
            row.extend([d.gaussian_boundary[i], d.plane_wave_boundary[i], d.unit_ratio_line[i]]);
            t.push(row);
        }
        self.out.write_csv("regime.csv", &t)?;
        Ok(())
    }

    fn single_screen(&mut self) -> Result<()> {
        let s = self.cfg.single_screen.clone();
        let basis = self.cfg.basis()?;
        let mut ch = SingleScreenChannel::new(&basis, s.options())?;
        if let StateSection::Bell { l } = self.cfg.state {
            let (plus, minus) = qubit_indices(&basis, l)?;
            let bell = TwoPhotonDensity::bell(basis.len(), plus, minus)?;
            let out = ch.pair_density(&bell, s.w_over_r0, s.kind, s.arms)?;
            let mut rec = metrics::pair_metrics(&out.rho, 0.0)?;
            let q = metrics::qubit_reduce_indices(&out.rho, plus, minus)?;
            rec.concurrence = Some(metrics::concurrence(&q.rho)?);
            self.check(&rec, "single-screen pair state");
            let pm = metrics::pair_matrix(&out.rho);
            let el = self.elements(pm.nrows())?;
            let mut t = CsvTable::new(metrics_header(&el, true));
            t.push(metrics_row(&pm, &rec, &el, true));
            self.out.write_csv("single_screen.csv", &t)?;
            self.out.write_json(
                "pair_rho.json",
                &json!({ "basis": Self::basis_json(&basis), "w_over_r0": s.w_over_r0, "rho": complex_json(out.rho.view().into_dyn()) }),
            )?;
            self.summary.insert("kept_weight".into(), json!(q.kept_weight));
            return Ok(());
        }
        let c = self.cfg.coefficients(&basis)?;
        let psi = InputState::Coefficients(c);
        let rho = ch.density_matrix(&psi, s.w_over_r0, s.kind)?;
        let rec = metrics::state_metrics(&rho.rho, 0.0)?;
        self.check(&rec, "single-screen state");
        let el = self.elements(rho.dim())?;
        let mut t = CsvTable::new(metrics_header(&el, false));
        t.push(metrics_row(&rho.rho, &rec, &el, false));
        self.out.write_csv("single_screen.csv", &t)?;
        let mut doc = json!({ "basis": Self::basis_json(&basis), "w_over_r0": s.w_over_r0, "rho": complex_json(rho.rho.view().into_dyn()) });
        if let Some(n) = s.mc_trials {
            let mc = spss_mc_oracle(&psi, &basis, s.w_over_r0, s.kind, n, self.seed, s.options())?;
            doc["rho_mc"] = complex_json(mc.rho.view().into_dyn());
            doc["stderr_mc"] = complex_json(mc.stderr.view().into_dyn());
        }
        self.out.write_json("rho.json", &doc)?;
        Ok(())
    }

    fn quadrature(&self) -> PolarQuadrature {
        PolarQuadrature {
            n_radial: self.cfg.propagation.n_radial,
            n_angular: self.cfg.propagation.n_angular,
            ..Default::default()
        }
    }

    fn assembler(&self, basis: &ModalBasis, z: f64) -> Result<CouplingAssembler> {
        let optics = self.cfg.optics()?;
        CouplingAssembler::new(
            basis,
            optics.wavelength,
            &self.cfg.turbulence()?,
            &self.quadrature(),
            self.cfg.propagation.frame,
            z,
        )
    }

    /// Coupling set through the cache, when one is configured.
    fn coupling_set(&mut self, asm: &CouplingAssembler) -> Result<CouplingSet> {
        let Some(dir) = &self.ctx.cache_dir else {
            return asm.coupling_set();
        };
        let cache = CouplingCache::new(dir)?;
        let prov = asm.provenance();
        if let Some(c) = cache.load(&prov)? {
            self.summary.insert("coupling_cache".into(), json!("hit"));
            return Ok(c);
        }
        let c = asm.coupling_set()?;
        cache.store(&c)?;
        self.summary.insert("coupling_cache".into(), json!("miss"));
        Ok(c)
    }

    fn couplings(&mut self) -> Result<()> {
        let basis = self.cfg.basis()?;
        let z = match self.cfg.propagation.frame {
            ModeFrame::Waist => 0.0,
            ModeFrame::CoPropagating => self.cfg.distance().unwrap_or(0.0),
        };
        let asm = self.assembler(&basis, z)?;
        let c = self.coupling_set(&asm)?;
        let rows: Vec<usize> = (0..c.dim()).collect();
        self.summary.insert("lambda_t".into(), json!(c.lambda_t));
        self.summary.insert("kinetic_hermiticity_defect".into(), json!(c.kinetic_hermiticity_defect()));
        self.summary.insert("lambda_symmetry_defect".into(), json!(c.lambda_symmetry_defect()));
        self.summary.insert("contraction_defect".into(), json!(c.contraction_defect(&rows)));
        self.out.write_json(
            "couplings.json",
            &json!({
                "basis": Self::basis_json(&basis),
                "p": complex_json(c.p.view().into_dyn()),
                "lambda": complex_json(c.lambda.view().into_dyn()),
                "lambda_t": c.lambda_t,
                "lambda_t_parts": c.lambda_t_parts,
                "provenance": serde_json::to_value(&c.provenance)?,
            }),
        )?;
        Ok(())
    }

    fn step_control(&self, z: f64) -> Result<StepControl> {
        let optics = self.cfg.optics()?;
        let mut cps = self.cfg.checkpoints()?;
        cps.retain(|c| *c > 0.0 && *c < z);
        Ok(StepControl {
            step: self.cfg.step()?,
            tolerance: self.cfg.propagation.tolerance,
            checkpoints: cps,
            rayleigh_range: Some(optics.rayleigh_range()),
            ..Default::default()
        })
    }

    fn single_rhs(&mut self, basis: &ModalBasis) -> Result<Box<dyn Rhs<Ix2>>> {
        let p = &self.cfg.propagation;
        let asm = self.assembler(basis, 0.0)?;
        Ok(match (p.equation, p.frame) {
            (Equation::Ipe, ModeFrame::Waist) => Box::new(IpeSingle::new(self.coupling_set(&asm)?)),
            (Equation::Ipe, ModeFrame::CoPropagating) => Box::new(CoPropagatingIpe::new(asm)?),
            (Equation::Lindblad, frame) => {
                let kin = match frame {
                    ModeFrame::Waist => Some(crate::couplings::kinetic_matrix(basis, asm.wavenumber())?),
                    ModeFrame::CoPropagating => {
                        return Err(Error::config("propagation.frame", "the Lindblad form runs in the waist frame"))
                    }
                };
                Box::new(LindbladSingle::new(asm, kin, p.closure))
            }
        })
    }

    fn write_trajectory<D: Dimension>(
        &mut self,
        points: &[crate::ipe::TrajectoryPoint<Array<C64, D>>],
        to_matrix: impl Fn(&Array<C64, D>) -> Array2<C64>,
        concurrence: bool,
    ) -> Result<()> {
        let dim = to_matrix(&points[0].rho).nrows();
        let el = self.elements(dim)?;
        let mut t = CsvTable::new(metrics_header(&el, concurrence));
        for p in points {
            self.check(&p.metrics, "trajectory");
            t.push(metrics_row(&to_matrix(&p.rho), &p.metrics, &el, concurrence));
        }
        self.out.write_csv("trajectory.csv", &t)?;
        Ok(())
    }

    fn evolve(&mut self) -> Result<()> {
        let z = self.cfg.distance()?;
        let basis = self.cfg.basis()?;
        let mut ctl = self.step_control(z)?;
        if let StateSection::Bell { l } = self.cfg.state {
            if self.cfg.propagation.frame != ModeFrame::Waist {
                return Err(Error::config("propagation.frame", "pair evolution runs in the waist frame"));
            }
            let (plus, minus) = qubit_indices(&basis, l)?;
            ctl.qubit = Some((plus, minus));
            let asm = self.assembler(&basis, 0.0)?;
            let c = self.coupling_set(&asm)?;
            let mut rhs = IpePair::new(c.clone(), c, self.cfg.propagation.pair_mode);
            let rho0 = TwoPhotonDensity::bell(basis.len(), plus, minus)?;
            let tr = evolve(&rho0.rho, &mut rhs, (0.0, z), &ctl)?;
            self.write_trajectory(&tr.points, metrics::pair_matrix, true)?;
            let last = tr.last();
            self.summary.insert("step".into(), json!(tr.step));
            self.summary.insert("final_trace".into(), json!(last.metrics.trace));
            self.out.write_json(
                "final_rho.json",
                &json!({ "basis": Self::basis_json(&basis), "z": last.z, "rho": complex_json(last.rho.view().into_dyn()) }),
            )?;
            return Ok(());
        }
        let rho0 = DensityMatrix::pure(&self.cfg.coefficients(&basis)?);
        let mut rhs = self.single_rhs(&basis)?;
        let tr = evolve(&rho0.rho, rhs.as_mut(), (0.0, z), &ctl)?;
        self.write_trajectory(&tr.points, |m| m.clone(), false)?;
        let last = tr.last();
        self.summary.insert("step".into(), json!(tr.step));
        self.summary.insert("final_trace".into(), json!(last.metrics.trace));
        self.summary.insert("trace_drift".into(), json!(last.metrics.trace - 1.0));
        self.out.write_json(
            "final_rho.json",
            &json!({ "basis": Self::basis_json(&basis), "z": last.z, "rho": complex_json(last.rho.view().into_dyn()) }),
        )?;
        Ok(())
    }

    fn ensemble(&mut self, basis: &ModalBasis, z: f64) -> Result<EnsembleResult> {
        let m = &self.cfg.monte_carlo;
        let optics = self.cfg.optics()?;
        let cfg = EnsembleConfig {
            n_trials: m.n_trials,
            master_seed: self.seed,
            n_screens: m.n_screens,
            subharmonic_levels: m.subharmonic_levels,
            mask: m.mask.then(SuperGaussianMask::default),
            frame: self.cfg.propagation.frame,
            axial_correlation_length: self.cfg.axial_correlation_length()?,
            dump: m.dump.clone(),
        };
        let c = self.cfg.coefficients(basis)?;
        let psi0 = basis.synthesize(&c, 0.0, optics.wavelength)?;
        let r = ensemble_density_matrix(&psi0, basis, &self.cfg.turbulence()?, optics.wavelength, z, &cfg)?;
        self.summary.insert("mc_trace".into(), json!(r.trace));
        self.summary.insert("mean_mask_loss".into(), json!(r.mean_mask_loss));
        Ok(r)
    }

    fn mc(&mut self) -> Result<()> {
        let z = self.cfg.distance()?;
        let basis = self.cfg.basis()?;
        let r = self.ensemble(&basis, z)?;
        let mut t = CsvTable::new(["m", "n", "re", "im", "stderr_re", "stderr_im"]);
        for ((m, n), v) in r.rho.indexed_iter() {
            let s = r.stderr[[m, n]];
            t.push(vec![m as f64, n as f64, v.re, v.im, s.re, s.im]);
        }
        self.out.write_csv("mc.csv", &t)?;
        self.out.write_json(
            "rho_mc.json",
            &json!({
                "basis": Self::basis_json(&basis),
                "z": z,
                "n_trials": r.n_trials,
                "rho": complex_json(r.rho.view().into_dyn()),
                "stderr": complex_json(r.stderr.view().into_dyn()),
            }),
        )?;
        Ok(())
    }

    fn compare(&mut self) -> Result<()> {
        let z = self.cfg.distance()?;
        let basis = self.cfg.basis()?;
        let rho0 = DensityMatrix::pure(&self.cfg.coefficients(&basis)?);
        let ctl = self.step_control(z)?;
        let mut rhs = self.single_rhs(&basis)?;
        let tr = evolve(&rho0.rho, rhs.as_mut(), (0.0, z), &ctl)?;
        let ipe = &tr.last().rho;
        self.check(&tr.last().metrics, "compare (IPE)");
        let mc = self.ensemble(&basis, z)?;
        let rows = compare_elements(ipe, &mc)?;
        let mut t = CsvTable::new(["m", "n", "imaginary", "ipe", "mc", "stderr", "z"]);
        for r in &rows {
            t.push(vec![r.m as f64, r.n as f64, r.imaginary as u8 as f64, r.reference, r.estimate, r.stderr, r.z]);
        }
        self.out.write_csv("compare.csv", &t)?;
        let (w2, w3) = agreement_fractions(&rows);
        let worst = rows.iter().map(|r| r.z.abs()).fold(0.0, f64::max);
        self.summary.insert("within_2_sigma".into(), json!(w2));
        self.summary.insert("within_3_sigma".into(), json!(w3));
        self.summary.insert("max_abs_z".into(), json!(worst));
        let limit = self.cfg.monte_carlo.z_limit;
        for r in rows.iter().filter(|r| !(r.z.abs() < limit)) {
            self.violations.push((
                Check::Agreement,
                format!("ρ[{}, {}] {}: z = {:.3}", r.m, r.n, if r.imaginary { "im" } else { "re" }, r.z),
            ));
        }
        Ok(())
    }

    fn concurrence_curve(&mut self) -> Result<()> {
        let StateSection::Bell { l } = self.cfg.state else {
            return Err(Error::config("state.kind", "concurrence-curve needs a bell state"));
        };
        let s = &self.cfg.single_screen;
        let ws = linspace(s.sweep_start, s.sweep_stop, s.sweep_points);
        let c = concurrence_curve(l, &ws, s.kind, s.arms, s.options())?;
        let mut t = CsvTable::new(["w_over_r0", "concurrence", "margin", "kept_weight", "trace"]);
        for p in &c.points {
            t.push(vec![p.w_over_r0, p.concurrence, p.margin, p.kept_weight, p.trace]);
        }
        self.out.write_csv("concurrence.csv", &t)?;
        self.summary.insert("l".into(), json!(l));
        self.summary.insert("crossing".into(), json!(c.crossing));
        Ok(())
    }
}

fn qubit_indices(basis: &ModalBasis, l: i32) -> Result<(usize, usize)> {
    let find = |l: i32| {
        basis
            .index_of(ModeIndex::lg(0, l))
            .ok_or_else(|| Error::config("state.l", format!("basis lacks LG(0, {l})")))
    };
    if l == 0 {
        return Err(Error::config("state.l", "bell state needs ℓ ≠ 0"));
    }
    Ok((find(l)?, find(-l)?))
}
