use serde::{Deserialize, Serialize};

use super::FdtdError;

/// Boundary treatment along one axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    /// Convolutional PML backed by a PEC wall.
    #[default]
    Pml,
    /// Wrap-around. Only allowed on the transverse (x, y) axes.
    Periodic,
}

/// Grading of the convolutional PML.
///
/// Conductivity follows `sigma(rho) = sigma_max * rho^order` with depth
/// `rho` in `[0, 1]`. `sigma_max` is `sigma_factor` times the usual
/// reflection-optimal estimate `0.8 (order + 1) / dx` (normalized units,
/// `eps0 = mu0 = c = 1`). The complex-frequency shift `alpha` falls off
/// linearly from `alpha_max` at the interior edge to zero at the wall.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PmlParams {
    pub order: f64,
    pub sigma_factor: f64,
    pub alpha_max: f64,
}

impl Default for PmlParams {
    fn default() -> Self {
        Self { order: 3.0, sigma_factor: 1.0, alpha_max: 0.0 }
    }
}

/// Uniform cubic Yee grid.
///
/// Lengths are in nanometres. Node `(i, j, k)` sits at
/// `(i, j, k) * cell_size_nm` in the grid frame; `extents` counts nodes per
/// axis. The outermost `pml_cells` node layers of every `Pml` axis belong to
/// the absorbing layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub cell_size_nm: f64,
    pub extents: [usize; 3],
    #[serde(default = "default_courant")]
    pub courant_factor: f64,
    #[serde(default = "default_pml_cells")]
    pub pml_cells: usize,
    #[serde(default)]
    pub pml: PmlParams,
    #[serde(default)]
    pub boundaries: [Boundary; 3],
}

fn default_courant() -> f64 {
    0.5
}

fn default_pml_cells() -> usize {
    10
}

pub const DEFAULT_CELL_SIZE_NM: f64 = 25.0;
pub const MIN_PML_CELLS: usize = 5;

impl GridSpec {
    pub fn new(cell_size_nm: f64, extents: [usize; 3]) -> Self {
        Self {
            cell_size_nm,
            extents,
            courant_factor: default_courant(),
            pml_cells: default_pml_cells(),
            pml: PmlParams::default(),
            boundaries: [Boundary::Pml; 3],
        }
    }

    pub fn validate(&self) -> Result<(), FdtdError> {
        let bad = |msg: String| Err(FdtdError::InvalidGrid(msg));
        if !(self.cell_size_nm > 0.0 && self.cell_size_nm.is_finite()) {
            return bad(format!("cell size must be positive, got {}", self.cell_size_nm));
        }
        if !(self.courant_factor > 0.0 && self.courant_factor < 1.0) {
            return bad(format!("courant factor must lie in (0,1), got {}", self.courant_factor));
        }
        if self.courant_factor * 3f64.sqrt() >= 1.0 {
            return bad(format!(
                "courant factor {} violates the 3D stability bound 1/sqrt(3)",
                self.courant_factor
            ));
        }
        if self.boundaries[2] != Boundary::Pml {
            return bad("the z axis must be bounded by PML".into());
        }
        if self.pml_cells < MIN_PML_CELLS {
            return bad(format!("need at least {MIN_PML_CELLS} PML cells, got {}", self.pml_cells));
        }
        if !(self.pml.order >= 0.0 && self.pml.sigma_factor >= 0.0 && self.pml.alpha_max >= 0.0) {
            return bad("PML grading parameters must be non-negative".into());
        }
        for axis in 0..3 {
            let n = self.extents[axis];
            match self.boundaries[axis] {
                Boundary::Pml if n <= 2 * self.pml_cells + 1 => {
                    return bad(format!(
                        "axis {axis} has {n} nodes, needs more than 2*pml_cells+1 = {}",
                        2 * self.pml_cells + 1
                    ));
                }
                Boundary::Periodic if n < 2 => {
                    return bad(format!("periodic axis {axis} needs at least 2 nodes"));
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Time step in normalized units (nm of light travel).
    pub fn dt(&self) -> f64 {
        self.courant_factor * self.cell_size_nm
    }

    pub fn len(&self) -> usize {
        self.extents.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.extents[1] + j) * self.extents[2] + k
    }

    /// PML thickness in nodes on `axis` (zero for periodic axes).
    pub fn pml_on(&self, axis: usize) -> usize {
        match self.boundaries[axis] {
            Boundary::Pml => self.pml_cells,
            Boundary::Periodic => 0,
        }
    }

    /// Node-index range `[lo, hi]` (inclusive) of the PML-free interior.
    pub fn interior(&self, axis: usize) -> (usize, usize) {
        let p = self.pml_on(axis);
        (p, self.extents[axis] - 1 - p)
    }

    /// Interior bounds in nm, inclusive.
    pub fn interior_nm(&self, axis: usize) -> (f64, f64) {
        let (lo, hi) = self.interior(axis);
        (lo as f64 * self.cell_size_nm, hi as f64 * self.cell_size_nm)
    }

    pub fn is_periodic(&self, axis: usize) -> bool {
        self.boundaries[axis] == Boundary::Periodic
    }

    /// Converts a coordinate in nm to a node index, requiring exact alignment.
    pub fn aligned_index(&self, axis: usize, position_nm: f64) -> Result<usize, FdtdError> {
        let f = position_nm / self.cell_size_nm;
        let r = f.round();
        if (f - r).abs() > 1e-6 || r < 0.0 || r as usize >= self.extents[axis] {
            return Err(FdtdError::NotCellAligned { axis, position_nm });
        }
        Ok(r as usize)
    }
}
