//! Far-field projection of monitored near fields and objective collection.
//!
//! Two projections produce an [`AngularSpectrum`]:
//!
//! * [`near_to_far`] Fourier transforms the tangential phasors on a `+z`
//!   plane and gives each propagating `(kx, ky)` bin its share of the plane
//!   flux. It is exact only for a plane that captures the whole field.
//! * [`project_box`] radiates the equivalent currents on a closed box into
//!   a layered (half-space) background. The background Green's function is
//!   evaluated by reciprocity with Fresnel plane waves, so the box may cut
//!   through the substrate surface. Directions are sampled on a polar
//!   Gauss-Legendre grid split at the objective's NA.

mod plane;
mod surface;

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::StructureSpec;

pub use plane::{near_to_far, ProjectionOptions, DEFAULT_PADDED_SIZE};
pub use surface::{gauss_legendre, project_box, DirectionGrid, HalfSpace};

pub const DEFAULT_NA: f64 = 0.85;

#[derive(Debug, Error)]
pub enum FarfieldError {
    #[error("invalid objective: {0}")]
    InvalidObjective(String),
    #[error("monitor plane must be normal to +z")]
    NotUpward,
    #[error("monitor surface meets a structure (eps = {eps}, expected {expected}, at node {node:?})")]
    InDielectric { eps: f64, expected: f64, node: [usize; 3] },
    #[error("total emitted power must be positive, got {0}")]
    NonPositivePower(f64),
    #[error("efficiency {0} is outside [0, 1]")]
    Unphysical(f64),
    #[error("orientation mismatch: {0:?} vs {1:?}")]
    OrientationMismatch(DipoleAxis, DipoleAxis),
    #[error("wavelength index {0} out of range")]
    NoWavelength(usize),
    #[error("invalid direction grid: {0}")]
    InvalidDirections(String),
    #[error("malformed CSV: {0}")]
    Parse(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSpec {
    pub numerical_aperture: f64,
}

impl Default for ObjectiveSpec {
    fn default() -> Self {
        Self { numerical_aperture: DEFAULT_NA }
    }
}

impl ObjectiveSpec {
    pub fn new(numerical_aperture: f64) -> Self {
        Self { numerical_aperture }
    }

    pub fn validate(&self, ambient_index: f64) -> Result<(), FarfieldError> {
        let na = self.numerical_aperture;
        if !(na >= 0.0 && na < ambient_index) {
            return Err(FarfieldError::InvalidObjective(format!(
                "numerical aperture {na} must lie in [0, {ambient_index})"
            )));
        }
        Ok(())
    }
}

/// Dipole orientation relative to the c-axis (the surface normal).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DipoleAxis {
    Horizontal,
    Vertical,
}

impl DipoleAxis {
    pub fn vector(self) -> [f64; 3] {
        match self {
            DipoleAxis::Horizontal => [1.0, 0.0, 0.0],
            DipoleAxis::Vertical => [0.0, 0.0, 1.0],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DipoleAxis::Horizontal => "horizontal",
            DipoleAxis::Vertical => "vertical",
        }
    }
}

impl std::str::FromStr for DipoleAxis {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "horizontal" => Ok(DipoleAxis::Horizontal),
            "vertical" => Ok(DipoleAxis::Vertical),
            _ => Err(format!("unknown orientation {s:?}")),
        }
    }
}

/// One far-field direction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectrumBin {
    /// Transverse wavevector (rad/nm) in the ambient medium.
    pub kx: f64,
    pub ky: f64,
    /// Complex field amplitude of the plane wave (arbitrary scale).
    pub e: [Complex64; 3],
    /// Time-averaged power carried into the upper half-space.
    pub power: f64,
    /// Solid angle represented by the bin (sr).
    pub solid_angle: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AngularSpectrum {
    pub wavelength_nm: f64,
    pub ambient_index: f64,
    /// Propagating directions only.
    pub bins: Vec<SpectrumBin>,
    /// Net flux through the monitored plane (plane projection) or emitted
    /// into the upper half-space (box projection).
    pub plane_power: f64,
}

impl AngularSpectrum {
    /// Vacuum wavenumber.
    pub fn k0(&self) -> f64 {
        2.0 * PI / self.wavelength_nm
    }

    /// Wavenumber in the ambient medium.
    pub fn k(&self) -> f64 {
        self.k0() * self.ambient_index
    }

    pub fn propagating_power(&self) -> f64 {
        self.bins.iter().map(|b| b.power).sum()
    }

    /// Power in bins with transverse wavenumber at most `kt_max`.
    pub fn power_within(&self, kt_max: f64) -> f64 {
        let k2 = kt_max * kt_max * (1.0 + 1e-12);
        self.bins.iter().filter(|b| b.kx * b.kx + b.ky * b.ky <= k2).map(|b| b.power).sum()
    }

    /// Polar and azimuthal angles (rad) of a bin.
    pub fn angles(&self, bin: &SpectrumBin) -> (f64, f64) {
        let kt = (bin.kx * bin.kx + bin.ky * bin.ky).sqrt();
        ((kt / self.k()).min(1.0).asin(), bin.ky.atan2(bin.kx))
    }

    /// Radiant intensity `dP/dOmega` of a bin.
    pub fn intensity(&self, bin: &SpectrumBin) -> f64 {
        bin.power / bin.solid_angle
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollectionResult {
    pub structure: StructureSpec,
    pub orientation: DipoleAxis,
    pub collected_power: f64,
    pub total_emitted_power: f64,
    pub efficiency: f64,
}

/// Fraction of `total_power` that falls inside the objective's NA cone.
pub fn collection_efficiency(
    spectrum: &AngularSpectrum,
    objective: &ObjectiveSpec,
    total_power: f64,
    structure: StructureSpec,
    orientation: DipoleAxis,
) -> Result<CollectionResult, FarfieldError> {
    objective.validate(spectrum.ambient_index)?;
    if !(total_power > 0.0) {
        return Err(FarfieldError::NonPositivePower(total_power));
    }
    let collected = if objective.numerical_aperture == 0.0 {
        0.0
    } else {
        spectrum.power_within(objective.numerical_aperture * spectrum.k0())
    };
    let efficiency = collected / total_power;
    if !(0.0..=1.0).contains(&efficiency) {
        return Err(FarfieldError::Unphysical(efficiency));
    }
    Ok(CollectionResult { structure, orientation, collected_power: collected, total_emitted_power: total_power, efficiency })
}

/// One row of an enhancement curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnhancementPoint {
    pub diameter_nm: f64,
    pub orientation: DipoleAxis,
    pub efficiency: f64,
    pub enhancement: f64,
}

/// `efficiency(d) / efficiency(bulk)` for each pillar result.
pub fn enhancement_curve(pillars: &[CollectionResult], bulk: &CollectionResult) -> Result<Vec<EnhancementPoint>, FarfieldError> {
    if !(bulk.efficiency > 0.0) {
        return Err(FarfieldError::NonPositivePower(bulk.efficiency));
    }
    pillars
        .iter()
        .map(|r| {
            if r.orientation != bulk.orientation {
                return Err(FarfieldError::OrientationMismatch(r.orientation, bulk.orientation));
            }
            Ok(EnhancementPoint {
                diameter_nm: r.structure.pillar_diameter_nm,
                orientation: r.orientation,
                efficiency: r.efficiency,
                enhancement: r.efficiency / bulk.efficiency,
            })
        })
        .collect()
}

pub const ENHANCEMENT_CSV_HEADER: [&str; 4] = ["diameter_nm", "orientation", "efficiency", "enhancement"];

/// Writes the curve as CSV. A bulk reference row, if present, uses
/// `diameter_nm = 0` and `enhancement = 1`.
pub fn write_enhancement_csv<W: Write>(out: W, rows: &[EnhancementPoint]) -> Result<(), FarfieldError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ENHANCEMENT_CSV_HEADER)?;
    for r in rows {
        w.write_record([
            format!("{}", r.diameter_nm),
            r.orientation.as_str().to_string(),
            format!("{:.8e}", r.efficiency),
            format!("{:.6}", r.enhancement),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_enhancement_csv<R: std::io::Read>(input: R) -> Result<Vec<EnhancementPoint>, FarfieldError> {
    let mut r = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("").trim().to_string();
        let num = |i: usize| -> Result<f64, FarfieldError> {
            field(i).parse().map_err(|_| FarfieldError::Parse(format!("bad number {:?}", field(i))))
        };
        rows.push(EnhancementPoint {
            diameter_nm: num(0)?,
            orientation: field(1).parse().map_err(FarfieldError::Parse)?,
            efficiency: num(2)?,
            enhancement: num(3)?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_spectrum() -> AngularSpectrum {
        // isotropic emitter sampled on the direction grid
        let grid = DirectionGrid::default();
        let bins = grid
            .directions(1.0)
            .unwrap()
            .into_iter()
            .map(|(th, ph, w)| {
                let k = 2.0 * PI / 1300.0;
                SpectrumBin {
                    kx: k * th.sin() * ph.cos(),
                    ky: k * th.sin() * ph.sin(),
                    e: [Complex64::new(0.0, 0.0); 3],
                    power: w,
                    solid_angle: w,
                }
            })
            .collect();
        AngularSpectrum { wavelength_nm: 1300.0, ambient_index: 1.0, bins, plane_power: 2.0 * PI }
    }

    #[test]
    fn efficiency_limits_and_monotonicity() {
        let s = toy_spectrum();
        let total = 4.0 * PI;
        let eff = |na: f64| collection_efficiency(&s, &ObjectiveSpec::new(na), total, StructureSpec::bulk(), DipoleAxis::Horizontal);
        assert_eq!(eff(0.0).unwrap().efficiency, 0.0);
        // cone fraction of an isotropic emitter is (1 - cos)/2
        let c = (1.0 - 0.85f64 * 0.85).sqrt();
        assert!((eff(0.85).unwrap().efficiency - 0.5 * (1.0 - c)).abs() < 1e-12);
        let mut last = 0.0;
        for i in 1..=19 {
            let e = eff(i as f64 * 0.05).unwrap().efficiency;
            assert!(e >= last && e <= 1.0);
            last = e;
        }
        assert!(eff(1.0).is_err());
        assert!(eff(-0.1).is_err());
        assert!(collection_efficiency(&s, &ObjectiveSpec::default(), 0.0, StructureSpec::bulk(), DipoleAxis::Horizontal).is_err());
    }

    #[test]
    fn enhancement_and_csv_round_trip() {
        let bulk = CollectionResult {
            structure: StructureSpec::bulk(),
            orientation: DipoleAxis::Vertical,
            collected_power: 1.0,
            total_emitted_power: 100.0,
            efficiency: 0.01,
        };
        let same = CollectionResult { structure: StructureSpec::pillar(500.0), ..bulk };
        let curve = enhancement_curve(&[same], &bulk).unwrap();
        assert_eq!(curve[0].enhancement, 1.0);
        assert_eq!(curve[0].diameter_nm, 500.0);
        let wrong = CollectionResult { orientation: DipoleAxis::Horizontal, ..same };
        assert!(matches!(enhancement_curve(&[wrong], &bulk), Err(FarfieldError::OrientationMismatch(..))));

        let mut buf = Vec::new();
        write_enhancement_csv(&mut buf, &curve).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("diameter_nm,orientation,efficiency,enhancement\n"));
        let back = read_enhancement_csv(&buf[..]).unwrap();
        assert_eq!(back[0].orientation, DipoleAxis::Vertical);
        assert!((back[0].efficiency - 0.01).abs() < 1e-12);
    }
}
