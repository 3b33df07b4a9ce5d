use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{FdtdError, GridSpec};

/// Gaussian-modulated sinusoid.
///
/// `bandwidth` is the standard deviation of the (Gaussian) source spectrum as
/// a fraction of the centre frequency. The envelope peaks `delay_sigmas`
/// temporal standard deviations after t = 0 and is treated as off once it is
/// that far past the peak again.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaussianPulse {
    pub center_wavelength_nm: f64,
    pub bandwidth: f64,
    pub delay_sigmas: f64,
}

impl Default for GaussianPulse {
    fn default() -> Self {
        Self { center_wavelength_nm: 1300.0, bandwidth: 0.15, delay_sigmas: 5.0 }
    }
}

impl GaussianPulse {
    /// Temporal standard deviation in normalized time units (nm).
    pub fn sigma_t(&self) -> f64 {
        self.center_wavelength_nm / (2.0 * PI * self.bandwidth)
    }

    pub fn peak_time(&self) -> f64 {
        self.delay_sigmas * self.sigma_t()
    }

    pub fn end_time(&self) -> f64 {
        2.0 * self.peak_time()
    }

    pub fn value(&self, t: f64) -> f64 {
        let tau = t - self.peak_time();
        let s = self.sigma_t();
        let w = 2.0 * PI / self.center_wavelength_nm;
        (-0.5 * (tau / s).powi(2)).exp() * (w * tau).sin()
    }
}

/// Point electric dipole injected as a soft current source.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DipoleSource {
    /// Grid-frame position in nm.
    pub position_nm: [f64; 3],
    pub orientation: [f64; 3],
    #[serde(default)]
    pub pulse: GaussianPulse,
    #[serde(default = "unit")]
    pub amplitude: f64,
}

fn unit() -> f64 {
    1.0
}

impl DipoleSource {
    pub fn new(position_nm: [f64; 3], orientation: [f64; 3]) -> Self {
        Self { position_nm, orientation, pulse: GaussianPulse::default(), amplitude: 1.0 }
    }

    pub fn validate(&self, grid: &GridSpec) -> Result<(), FdtdError> {
        let norm = self.orientation.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(FdtdError::InvalidSource(format!("orientation norm is {norm}, expected 1")));
        }
        if !(self.pulse.bandwidth > 0.0 && self.pulse.center_wavelength_nm > 0.0) {
            return Err(FdtdError::InvalidSource("pulse needs positive wavelength and bandwidth".into()));
        }
        for axis in 0..3 {
            let (lo, hi) = grid.interior_nm(axis);
            let p = self.position_nm[axis];
            let periodic = grid.is_periodic(axis);
            if !periodic && !(p > lo && p < hi) {
                return Err(FdtdError::InvalidSource(format!(
                    "position {p} nm on axis {axis} is not strictly inside the PML-free region ({lo}, {hi})"
                )));
            }
        }
        Ok(())
    }

    /// Per-component injection sites: `(component, node index, weight)`.
    ///
    /// Each non-zero orientation component drives the nearest Yee edge of
    /// that component.
    pub(crate) fn injection_sites(&self, grid: &GridSpec) -> Vec<(usize, [usize; 3], f64)> {
        let dx = grid.cell_size_nm;
        (0..3)
            .filter(|&c| self.orientation[c].abs() > 1e-12)
            .map(|c| {
                let mut node = [0usize; 3];
                for (a, n) in node.iter_mut().enumerate() {
                    let f = self.position_nm[a] / dx;
                    *n = if a == c { (f - 0.5).round() as usize } else { f.round() as usize };
                }
                (c, node, self.orientation[c] * self.amplitude)
            })
            .collect()
    }

    /// Physical location of the driven edge for component `c`.
    pub fn edge_position(&self, grid: &GridSpec, c: usize) -> Option<[f64; 3]> {
        self.injection_sites(grid).into_iter().find(|s| s.0 == c).map(|(c, node, _)| {
            let mut p = [0.0; 3];
            for a in 0..3 {
                p[a] = node[a] as f64 * grid.cell_size_nm + if a == c { 0.5 * grid.cell_size_nm } else { 0.0 };
            }
            p
        })
    }
}
