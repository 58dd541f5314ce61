//! Quantities with explicit unit suffixes, as written in scenario files:
//! `"633 nm"`, `"1.5 cm"`, `"1e-14 m^-2/3"`, `"250 m^-1"`.

use crate::error::{Error, Result};

/// Physical dimension of a quantity string.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dimension {
    Length,
    /// Cn², m^(-2/3).
    StructureConstant,
    /// Spatial frequency, cycles per metre.
    SpatialFrequency,
}

impl Dimension {
    fn units(self) -> &'static [(&'static str, f64)] {
        match self {
            Dimension::Length => &[
                ("nm", 1e-9),
                ("um", 1e-6),
                ("µm", 1e-6),
                ("mm", 1e-3),
                ("cm", 1e-2),
                ("m", 1.0),
                ("km", 1e3),
            ],
            Dimension::StructureConstant => &[("m^-2/3", 1.0), ("m^(-2/3)", 1.0)],
            Dimension::SpatialFrequency => &[("m^-1", 1.0), ("1/m", 1.0), ("mm^-1", 1e3), ("1/mm", 1e3)],
        }
    }

    fn name(self) -> &'static str {
        match self {
            Dimension::Length => "a length (nm, um, mm, cm, m, km)",
            Dimension::StructureConstant => "a structure constant (m^-2/3)",
            Dimension::SpatialFrequency => "a spatial frequency (m^-1, 1/m, mm^-1)",
        }
    }
}

/// Parses `"<number> <unit>"` into SI. `field` names the config key in errors.
pub fn parse_quantity(field: &str, text: &str, dim: Dimension) -> Result<f64> {
    let bad = |why: String| Error::Config {
        field: field.to_string(),
        message: why,
    };
    let t = text.trim();
    let (num, unit) = t
        .split_once(char::is_whitespace)
        .ok_or_else(|| bad(format!("\"{t}\" has no unit; expected {}", dim.name())))?;
    let value: f64 = num
        .parse()
        .map_err(|_| bad(format!("\"{num}\" is not a number")))?;
    if !value.is_finite() {
        return Err(bad(format!("\"{num}\" is not finite")));
    }
    let unit = unit.trim();
    let scale = dim
        .units()
        .iter()
        .find(|(u, _)| *u == unit)
        .map(|(_, s)| *s)
        .ok_or_else(|| bad(format!("unknown unit \"{unit}\"; expected {}", dim.name())))?;
    Ok(value * scale)
}

pub fn length(field: &str, text: &str) -> Result<f64> {
    parse_quantity(field, text, Dimension::Length)
}

pub fn cn2(field: &str, text: &str) -> Result<f64> {
    parse_quantity(field, text, Dimension::StructureConstant)
}

pub fn spatial_frequency(field: &str, text: &str) -> Result<f64> {
    parse_quantity(field, text, Dimension::SpatialFrequency)
}
