//! Built-in collection curve, from a `collection-sweep` run with default
//! settings (25 nm cells, NA 0.85). Used whenever no curve file is
//! configured so the analysis commands run without a solver sweep.

use nvsic::nvmodel::{CollectionCurve, CurvePoint};

use crate::config::RunConfig;
use crate::CliError;

/// `(diameter_nm, c0, c90)`; `c0` is the vertical (c-axis) dipole.
pub const REFERENCE_POINTS: [(f64, f64, f64); 9] = [
    (300.0, 0.10301, 0.45666),
    (400.0, 0.16896, 0.35412),
    (500.0, 0.21067, 0.49611),
    (600.0, 0.20655, 0.32080),
    (700.0, 0.13210, 0.35136),
    (800.0, 0.14208, 0.35997),
    (900.0, 0.20750, 0.29899),
    (1000.0, 0.26779, 0.26513),
    (1100.0, 0.22629, 0.32506),
];

pub const REFERENCE_BULK: CurvePoint = CurvePoint { c0: 0.00197, c90: 0.03130 };

pub fn reference_curve() -> CollectionCurve {
    let points = REFERENCE_POINTS.iter().map(|&(d, c0, c90)| (d, CurvePoint { c0, c90 })).collect();
    CollectionCurve::new(Some(REFERENCE_BULK), points).expect("reference curve is valid")
}

pub fn curve(config: &RunConfig) -> Result<CollectionCurve, CliError> {
    let c = match &config.curve.path {
        Some(p) => CollectionCurve::read_csv(crate::open(p)?).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?,
        None => reference_curve(),
    };
    Ok(c.with_interpolation(config.curve.interpolate))
}
