//! Scenario files: TOML with unit-suffixed quantities.
//!
//! ```toml
//! seed = 7
//!
//! [turbulence]
//! model = "von-karman"
//! cn2 = "1e-14 m^-2/3"
//! outer_scale = "50 m"
//!
//! [optics]
//! wavelength = "633 nm"
//! waist = "1 cm"
//!
//! [basis]
//! family = "lg"
//! n_modes = 6
//!
//! [propagation]
//! distance = "250 m"
//! ```

use crate::couplings::{Closure, ModeFrame};
use crate::error::{Error, Result};
use crate::grid::FrequencyGrid;
use crate::ipe::PairMode;
use crate::modes::{ModalBasis, ModeIndex};
use crate::single_screen::{PairArms, SpssOptions};
use crate::turbulence::{OpticalParams, SpectrumModel, StructureKind, TurbulenceSpec};
use crate::units;
use crate::C64;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunKind {
    Regime,
    SingleScreen,
    Couplings,
    Evolve,
    Mc,
    Compare,
    ConcurrenceCurve,
}

impl RunKind {
    pub fn name(self) -> &'static str {
        match self {
            RunKind::Regime => "regime",
            RunKind::SingleScreen => "single-screen",
            RunKind::Couplings => "couplings",
            RunKind::Evolve => "evolve",
            RunKind::Mc => "mc",
            RunKind::Compare => "compare",
            RunKind::ConcurrenceCurve => "concurrence-curve",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Run kind; the CLI subcommand takes precedence.
    pub run: Option<RunKind>,
    #[serde(default)]
    pub seed: u64,
    pub turbulence: TurbulenceSection,
    pub optics: OpticsSection,
    #[serde(default)]
    pub basis: BasisSection,
    #[serde(default)]
    pub state: StateSection,
    #[serde(default)]
    pub propagation: PropagationSection,
    #[serde(default)]
    pub single_screen: SingleScreenSection,
    #[serde(default)]
    pub monte_carlo: MonteCarloSection,
    #[serde(default)]
    pub regime: RegimeSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TurbulenceSection {
    pub model: SpectrumModel,
    pub cn2: String,
    pub outer_scale: Option<String>,
    pub inner_scale: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpticsSection {
    pub wavelength: String,
    pub waist: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisFamilyConfig {
    Lg,
    GridPatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BasisSection {
    pub family: BasisFamilyConfig,
    /// First n LG modes in order of 2p + |ℓ|.
    pub n_modes: Option<usize>,
    /// All LG modes up to this order (ignored if `n_modes` is set).
    pub max_order: Option<u32>,
    /// Grid patch half-width in nodes.
    pub half: usize,
    pub n_side: usize,
    /// Largest frequency on the grid; default 8/(π ω0).
    pub extent: Option<String>,
}

impl Default for BasisSection {
    fn default() -> Self {
        BasisSection {
            family: BasisFamilyConfig::Lg,
            n_modes: None,
            max_order: Some(1),
            half: 2,
            n_side: 128,
            extent: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StateSection {
    /// A single LG mode.
    Mode { p: u32, l: i32 },
    /// Coefficients over the basis as [re, im] pairs, normalized on load.
    Coefficients { values: Vec<[f64; 2]> },
    /// (|+ℓ⟩|−ℓ⟩ + |−ℓ⟩|+ℓ⟩)/√2 for a photon pair.
    Bell { l: i32 },
}

impl Default for StateSection {
    fn default() -> Self {
        StateSection::Mode { p: 0, l: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Equation {
    Ipe,
    Lindblad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PropagationSection {
    pub distance: Option<String>,
    pub checkpoints: Vec<String>,
    pub step: Option<String>,
    pub tolerance: f64,
    pub frame: ModeFrame,
    pub equation: Equation,
    pub closure: Closure,
    pub pair_mode: PairMode,
    pub n_radial: usize,
    pub n_angular: usize,
}

impl Default for PropagationSection {
    fn default() -> Self {
        PropagationSection {
            distance: None,
            checkpoints: Vec::new(),
            step: None,
            tolerance: 1e-6,
            frame: ModeFrame::Waist,
            equation: Equation::Ipe,
            closure: Closure::Complete,
            pair_mode: PairMode::UncorrelatedArms,
            n_radial: 128,
            n_angular: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SingleScreenSection {
    pub w_over_r0: f64,
    pub kind: StructureKind,
    pub arms: PairArms,
    pub n_side: usize,
    pub half_width: f64,
    pub tolerance: f64,
    pub sweep_start: f64,
    pub sweep_stop: f64,
    pub sweep_points: usize,
    /// Also run the Monte Carlo oracle with this many trials.
    pub mc_trials: Option<usize>,
}

impl Default for SingleScreenSection {
    fn default() -> Self {
        let o = SpssOptions::default();
        SingleScreenSection {
            w_over_r0: 0.5,
            kind: StructureKind::Quadratic,
            arms: PairArms::BothArms,
            n_side: o.n_side,
            half_width: o.half_width,
            tolerance: o.tolerance,
            sweep_start: 0.0,
            sweep_stop: 2.0,
            sweep_points: 41,
            mc_trials: None,
        }
    }
}

impl SingleScreenSection {
    pub fn options(&self) -> SpssOptions {
        SpssOptions {
            n_side: self.n_side,
            half_width: self.half_width,
            tolerance: self.tolerance,
            check_convergence: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonteCarloSection {
    pub n_trials: usize,
    pub n_screens: usize,
    pub subharmonic_levels: Option<u32>,
    pub mask: bool,
    pub axial_correlation_length: Option<String>,
    pub dump: Option<PathBuf>,
    /// |z| above which a `compare` element counts as a disagreement.
    pub z_limit: f64,
}

impl Default for MonteCarloSection {
    fn default() -> Self {
        MonteCarloSection {
            n_trials: 1000,
            n_screens: 10,
            subharmonic_levels: None,
            mask: false,
            axial_correlation_length: None,
            dump: None,
            z_limit: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegimeSection {
    pub cn2_lines: Vec<String>,
    pub t_min: f64,
    pub t_max: f64,
    pub n_points: usize,
}

impl Default for RegimeSection {
    fn default() -> Self {
        RegimeSection {
            cn2_lines: ["1e-12 m^-2/3", "1e-14 m^-2/3", "1e-16 m^-2/3"].map(String::from).to_vec(),
            t_min: 1e-2,
            t_max: 1e2,
            n_points: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Check {
    /// Minimum eigenvalue below −1e-6.
    Positivity,
    /// Any `compare` element beyond the z limit.
    Agreement,
    /// Trace above 1 + 1e-6.
    TraceBound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// ρ entries written per checkpoint; default: the diagonal.
    pub elements: Vec<[usize; 2]>,
    /// Invariant violations that make the run exit nonzero.
    pub fatal: Vec<Check>,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            elements: Vec::new(),
            fatal: vec![Check::Positivity, Check::TraceBound],
        }
    }
}

impl ScenarioConfig {
    /// Parses TOML text. Syntax and schema errors keep toml's line/column report.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::config("config", e.to_string()))?;
        cfg.turbulence()?;
        cfg.optics()?;
        Ok(cfg)
    }

    pub fn turbulence(&self) -> Result<TurbulenceSpec> {
        let t = &self.turbulence;
        let cn2 = units::cn2("turbulence.cn2", &t.cn2)?;
        let mut spec = match t.model {
            SpectrumModel::Kolmogorov => {
                if t.outer_scale.is_some() {
                    return Err(Error::config("turbulence.outer_scale", "not used by the kolmogorov model"));
                }
                TurbulenceSpec::kolmogorov(cn2)
            }
            SpectrumModel::VonKarman => {
                let l0 = t
                    .outer_scale
                    .as_deref()
                    .ok_or_else(|| Error::config("turbulence.outer_scale", "required for von-karman"))?;
                TurbulenceSpec::von_karman(cn2, units::length("turbulence.outer_scale", l0)?)
            }
        }
        .map_err(|e| Error::config("turbulence", e.to_string()))?;
        if let Some(l) = &t.inner_scale {
            spec = spec
                .with_inner_scale(units::length("turbulence.inner_scale", l)?)
                .map_err(|e| Error::config("turbulence.inner_scale", e.to_string()))?;
        }
        Ok(spec)
    }

    pub fn optics(&self) -> Result<OpticalParams> {
        let w = units::length("optics.wavelength", &self.optics.wavelength)?;
        let w0 = units::length("optics.waist", &self.optics.waist)?;
        OpticalParams::new(w, w0).map_err(|e| Error::config("optics", e.to_string()))
    }

    pub fn grid(&self) -> Result<FrequencyGrid> {
        let w0 = self.optics()?.waist;
        let extent = match &self.basis.extent {
            Some(e) => units::spatial_frequency("basis.extent", e)?,
            None => 8.0 / (std::f64::consts::PI * w0),
        };
        FrequencyGrid::new(self.basis.n_side, extent).map_err(|e| Error::config("basis.n_side", e.to_string()))
    }

    pub fn basis(&self) -> Result<ModalBasis> {
        let b = &self.basis;
        let w0 = self.optics()?.waist;
        let grid = self.grid()?;
        match b.family {
            BasisFamilyConfig::Lg => match (b.n_modes, b.max_order) {
                (Some(n), _) if n > 0 => ModalBasis::lg_first(n, w0, grid),
                (Some(_), _) => Err(Error::config("basis.n_modes", "must be >= 1")),
                (None, Some(o)) => ModalBasis::lg_up_to_order(o, w0, grid),
                (None, None) => Err(Error::config("basis", "set n_modes or max_order")),
            },
            BasisFamilyConfig::GridPatch => ModalBasis::grid_patch(b.half, w0, grid),
        }
    }

    /// Distance to propagate, required by evolve, mc and compare.
    pub fn distance(&self) -> Result<f64> {
        let d = self
            .propagation
            .distance
            .as_deref()
            .ok_or_else(|| Error::config("propagation.distance", "required for this run kind"))?;
        let z = units::length("propagation.distance", d)?;
        if !(z > 0.0) {
            return Err(Error::config("propagation.distance", "must be positive"));
        }
        Ok(z)
    }

    pub fn checkpoints(&self) -> Result<Vec<f64>> {
        self.propagation
            .checkpoints
            .iter()
            .enumerate()
            .map(|(i, c)| units::length(&format!("propagation.checkpoints[{i}]"), c))
            .collect()
    }

    pub fn step(&self) -> Result<Option<f64>> {
        self.propagation
            .step
            .as_deref()
            .map(|s| units::length("propagation.step", s))
            .transpose()
    }

    pub fn axial_correlation_length(&self) -> Result<f64> {
        match &self.monte_carlo.axial_correlation_length {
            Some(s) => units::length("monte_carlo.axial_correlation_length", s),
            None => Ok(0.0),
        }
    }

    pub fn regime_cn2_lines(&self) -> Result<Vec<f64>> {
        self.regime
            .cn2_lines
            .iter()
            .enumerate()
            .map(|(i, c)| units::cn2(&format!("regime.cn2_lines[{i}]"), c))
            .collect()
    }

    /// Single-photon coefficients over `basis`, normalized.
    pub fn coefficients(&self, basis: &ModalBasis) -> Result<Vec<C64>> {
        let mut c = match &self.state {
            StateSection::Mode { p, l } => {
                let i = basis
                    .index_of(ModeIndex::lg(*p, *l))
                    .ok_or_else(|| Error::config("state", format!("basis lacks LG({p}, {l})")))?;
                let mut c = vec![C64::new(0.0, 0.0); basis.len()];
                c[i] = C64::new(1.0, 0.0);
                c
            }
            StateSection::Coefficients { values } => {
                if values.len() != basis.len() {
                    return Err(Error::config(
                        "state.values",
                        format!("{} values for {} basis modes", values.len(), basis.len()),
                    ));
                }
                values.iter().map(|[r, i]| C64::new(*r, *i)).collect()
            }
            StateSection::Bell { .. } => {
                return Err(Error::config("state.kind", "bell is a pair state; this run needs a single photon"))
            }
        };
        let norm = c.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Err(Error::config("state.values", "all coefficients are zero"));
        }
        c.iter_mut().for_each(|v| *v /= norm);
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[turbulence]
model = "von-karman"
cn2 = "1e-14 m^-2/3"
outer_scale = "50 m"

[optics]
wavelength = "633 nm"
waist = "1 cm"
"#;

    #[test]
    fn minimal_config_resolves() {
        let cfg = ScenarioConfig::from_toml(BASE).unwrap();
        assert_eq!(cfg.turbulence().unwrap().outer_scale, Some(50.0));
        assert!((cfg.optics().unwrap().wavelength - 633e-9).abs() < 1e-20);
        let b = cfg.basis().unwrap();
        assert_eq!(b.len(), 3);
        assert_eq!(cfg.coefficients(&b).unwrap()[0], C64::new(1.0, 0.0));
        assert!(cfg.distance().is_err());
    }

    #[test]
    fn unit_errors_name_the_field() {
        let text = BASE.replace("633 nm", "633 furlongs");
        match ScenarioConfig::from_toml(&text) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "optics.wavelength"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let text = format!("{BASE}\n[basis]\nnmodes = 3\n");
        let e = ScenarioConfig::from_toml(&text).unwrap_err().to_string();
        assert!(e.contains("nmodes") && e.contains("line"), "{e}");
    }

    #[test]
    fn state_variants() {
        let text = format!("{BASE}\n[state]\nkind = \"coefficients\"\nvalues = [[1, 0], [0, 1], [0, 0]]\n");
        let cfg = ScenarioConfig::from_toml(&text).unwrap();
        let c = cfg.coefficients(&cfg.basis().unwrap()).unwrap();
        assert!((c[1].im - 0.5f64.sqrt()).abs() < 1e-15);
        let text = format!("{BASE}\n[state]\nkind = \"bell\"\nl = 1\n");
        let cfg = ScenarioConfig::from_toml(&text).unwrap();
        assert!(cfg.coefficients(&cfg.basis().unwrap()).is_err());
    }
}
