use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::kernel::FieldLattice;
use super::{FdtdError, GridSpec};

/// Tangential axes of a plane normal to `axis`, in right-handed cyclic
/// order so that `b x c` points along `+axis`.
pub const fn tangential(axis: usize) -> (usize, usize) {
    ((axis + 1) % 3, (axis + 2) % 3)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Normal {
    Positive,
    Negative,
}

impl Normal {
    pub fn sign(self) -> f64 {
        match self {
            Normal::Positive => 1.0,
            Normal::Negative => -1.0,
        }
    }

    pub fn reversed(self) -> Self {
        match self {
            Normal::Positive => Normal::Negative,
            Normal::Negative => Normal::Positive,
        }
    }
}

/// A flux surface in grid-frame nanometres. Coordinates must fall on
/// lattice nodes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Surface {
    /// Rectangle in the plane `x[axis] = position_nm`; `lo_nm`/`hi_nm` are
    /// the bounds along the two tangential axes (cyclic order).
    Plane { axis: usize, position_nm: f64, lo_nm: [f64; 2], hi_nm: [f64; 2], normal: Normal },
    /// Closed axis-aligned box with outward normals.
    Box { lo_nm: [f64; 3], hi_nm: [f64; 3] },
}

/// Running DFT of the tangential fields on one plane rectangle.
///
/// Every sample point carries the two tangential E components at its Yee
/// edge and the co-located tangential H components averaged over the two
/// half-planes on either side, so `E_b H_c* - E_c H_b*` is the normal
/// Poynting flux without further interpolation.
#[derive(Clone, Debug, PartialEq)]
pub struct PlaneMonitor {
    pub axis: usize,
    pub index: usize,
    pub lo: [usize; 2],
    pub hi: [usize; 2],
    pub normal: Normal,
    /// Whether each tangential axis wraps around the full periodic extent.
    pub wraps: [bool; 2],
    pub cell_size_nm: f64,
    pub phasors: Vec<PlanePhasors>,
}

/// Frozen phasors of one plane at one wavelength. Arrays are row-major over
/// `(nb, nc)` sample positions (`nb = hi_b - lo_b + 1`).
#[derive(Clone, Debug, PartialEq)]
pub struct PlanePhasors {
    pub wavelength_nm: f64,
    pub dims: [usize; 2],
    pub eb: Vec<Complex64>,
    pub ec: Vec<Complex64>,
    pub hb: Vec<Complex64>,
    pub hc: Vec<Complex64>,
}

impl PlaneMonitor {
    pub fn new(
        grid: &GridSpec,
        axis: usize,
        index: usize,
        lo: [usize; 2],
        hi: [usize; 2],
        normal: Normal,
        wavelengths_nm: &[f64],
    ) -> Result<Self, FdtdError> {
        let (b, c) = tangential(axis);
        let (ia0, ia1) = grid.interior(axis);
        if index < ia0 + 1 || index + 1 > ia1 {
            return Err(FdtdError::InvalidMonitor(format!(
                "plane index {index} on axis {axis} must leave one interior node on each side (interior {ia0}..={ia1})"
            )));
        }
        for (t, &ax) in [b, c].iter().enumerate() {
            let (l, h) = grid.interior(ax);
            if lo[t] > hi[t] || lo[t] < l || hi[t] > h {
                return Err(FdtdError::InvalidMonitor(format!(
                    "tangential range {}..={} on axis {ax} leaves the PML-free region {l}..={h}",
                    lo[t], hi[t]
                )));
            }
        }
        if wavelengths_nm.is_empty() || wavelengths_nm.iter().any(|w| !(*w > 0.0)) {
            return Err(FdtdError::InvalidMonitor("need at least one positive wavelength".into()));
        }
        let wraps = [
            grid.is_periodic(b) && lo[0] == 0 && hi[0] == grid.extents[b] - 1,
            grid.is_periodic(c) && lo[1] == 0 && hi[1] == grid.extents[c] - 1,
        ];
        let dims = [hi[0] - lo[0] + 1, hi[1] - lo[1] + 1];
        let n = dims[0] * dims[1];
        let zero = vec![Complex64::new(0.0, 0.0); n];
        Ok(Self {
            axis,
            index,
            lo,
            hi,
            normal,
            wraps,
            cell_size_nm: grid.cell_size_nm,
            phasors: wavelengths_nm
                .iter()
                .map(|&w| PlanePhasors {
                    wavelength_nm: w,
                    dims,
                    eb: zero.clone(),
                    ec: zero.clone(),
                    hb: zero.clone(),
                    hc: zero.clone(),
                })
                .collect(),
        })
    }

    pub fn from_surface(grid: &GridSpec, surface: &Surface, wavelengths_nm: &[f64]) -> Result<Self, FdtdError> {
        match *surface {
            Surface::Plane { axis, position_nm, lo_nm, hi_nm, normal } => {
                let (b, c) = tangential(axis);
                let index = grid.aligned_index(axis, position_nm)?;
                let lo = [grid.aligned_index(b, lo_nm[0])?, grid.aligned_index(c, lo_nm[1])?];
                let hi = [grid.aligned_index(b, hi_nm[0])?, grid.aligned_index(c, hi_nm[1])?];
                Self::new(grid, axis, index, lo, hi, normal, wavelengths_nm)
            }
            Surface::Box { .. } => Err(FdtdError::InvalidMonitor("expected a plane surface".into())),
        }
    }

    /// Whether the physical point lies on (within half a cell of) this plane.
    pub fn touches(&self, p_nm: [f64; 3]) -> bool {
        let d = (p_nm[self.axis] - self.index as f64 * self.cell_size_nm).abs();
        d < 0.5 * self.cell_size_nm
    }

    /// Trapezoid weights for the `b`-type samples (offset along b) and the
    /// `c`-type samples at `(ib, ic)`.
    pub fn weights(&self, ib: usize, ic: usize) -> (f64, f64) {
        let [nb, nc] = [self.hi[0] - self.lo[0], self.hi[1] - self.lo[1]];
        let edge = |i: usize, n: usize, wrap: bool| -> f64 {
            if wrap {
                1.0
            } else if i == 0 || i == n {
                0.5
            } else {
                1.0
            }
        };
        let inside = |i: usize, n: usize, wrap: bool| -> f64 {
            if wrap || i < n {
                1.0
            } else {
                0.0
            }
        };
        let wb = inside(ib, nb, self.wraps[0]) * edge(ic, nc, self.wraps[1]);
        let wc = edge(ib, nb, self.wraps[0]) * inside(ic, nc, self.wraps[1]);
        (wb, wc)
    }

    /// Time-averaged Poynting flux `1/2 Re(E x H*)` through the rectangle
    /// along its normal, in normalized power units (nm^2 area).
    pub fn flux(&self, wavelength_index: usize) -> f64 {
        let ph = &self.phasors[wavelength_index];
        let [nb1, nc1] = ph.dims;
        let mut acc = 0.0;
        for ib in 0..nb1 {
            for ic in 0..nc1 {
                let n = ib * nc1 + ic;
                let (wb, wc) = self.weights(ib, ic);
                acc += wb * (ph.eb[n] * ph.hc[n].conj()).re - wc * (ph.ec[n] * ph.hb[n].conj()).re;
            }
        }
        0.5 * acc * self.cell_size_nm * self.cell_size_nm * self.normal.sign()
    }

    /// Grid-frame positions of the `b`-type sample (`E_b`, `H_c`) and the
    /// `c`-type sample (`E_c`, `H_b`) at `(ib, ic)`.
    pub fn sample_positions(&self, ib: usize, ic: usize) -> ([f64; 3], [f64; 3]) {
        let (b, c) = tangential(self.axis);
        let n = self.node(ib, ic);
        let mut pb = n.map(|v| v as f64 * self.cell_size_nm);
        let mut pc = pb;
        pb[b] += 0.5 * self.cell_size_nm;
        pc[c] += 0.5 * self.cell_size_nm;
        (pb, pc)
    }

    /// Copy of this monitor with the normal flipped.
    pub fn reversed(&self) -> Self {
        Self { normal: self.normal.reversed(), ..self.clone() }
    }

    pub fn node(&self, ib: usize, ic: usize) -> [usize; 3] {
        let (b, c) = tangential(self.axis);
        let mut n = [0usize; 3];
        n[self.axis] = self.index;
        n[b] = self.lo[0] + ib;
        n[c] = self.lo[1] + ic;
        n
    }

    pub(crate) fn accumulate_e(&mut self, grid: &GridSpec, lat: &FieldLattice, phase: &[Complex64]) {
        let (b, c) = tangential(self.axis);
        let [nb1, nc1] = self.phasors[0].dims;
        for ib in 0..nb1 {
            for ic in 0..nc1 {
                let [i, j, k] = self.node(ib, ic);
                let idx = grid.index(i, j, k);
                let vb = lat.e[b][idx] as f64;
                let vc = lat.e[c][idx] as f64;
                let n = ib * nc1 + ic;
                for (ph, w) in self.phasors.iter_mut().zip(phase) {
                    ph.eb[n] += w * vb;
                    ph.ec[n] += w * vc;
                }
            }
        }
    }

    pub(crate) fn accumulate_h(&mut self, grid: &GridSpec, lat: &FieldLattice, phase: &[Complex64]) {
        let (b, c) = tangential(self.axis);
        let [nb1, nc1] = self.phasors[0].dims;
        let stride = match self.axis {
            0 => grid.extents[1] * grid.extents[2],
            1 => grid.extents[2],
            _ => 1,
        };
        for ib in 0..nb1 {
            for ic in 0..nc1 {
                let [i, j, k] = self.node(ib, ic);
                let idx = grid.index(i, j, k);
                let vb = 0.5 * (lat.h[b][idx] as f64 + lat.h[b][idx - stride] as f64);
                let vc = 0.5 * (lat.h[c][idx] as f64 + lat.h[c][idx - stride] as f64);
                let n = ib * nc1 + ic;
                for (ph, w) in self.phasors.iter_mut().zip(phase) {
                    ph.hb[n] += w * vb;
                    ph.hc[n] += w * vc;
                }
            }
        }
    }
}

/// Six plane monitors forming a closed box with outward normals.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxMonitor {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
    pub faces: Vec<PlaneMonitor>,
}

impl BoxMonitor {
    pub fn new(grid: &GridSpec, lo: [usize; 3], hi: [usize; 3], wavelengths_nm: &[f64]) -> Result<Self, FdtdError> {
        let mut faces = Vec::with_capacity(6);
        for axis in 0..3 {
            if lo[axis] >= hi[axis] {
                return Err(FdtdError::InvalidMonitor(format!("degenerate box along axis {axis}")));
            }
            let (b, c) = tangential(axis);
            for (index, normal) in [(lo[axis], Normal::Negative), (hi[axis], Normal::Positive)] {
                faces.push(PlaneMonitor::new(grid, axis, index, [lo[b], lo[c]], [hi[b], hi[c]], normal, wavelengths_nm)?);
            }
        }
        Ok(Self { lo, hi, faces })
    }

    pub fn from_surface(grid: &GridSpec, surface: &Surface, wavelengths_nm: &[f64]) -> Result<Self, FdtdError> {
        match *surface {
            Surface::Box { lo_nm, hi_nm } => {
                let mut lo = [0; 3];
                let mut hi = [0; 3];
                for a in 0..3 {
                    lo[a] = grid.aligned_index(a, lo_nm[a])?;
                    hi[a] = grid.aligned_index(a, hi_nm[a])?;
                }
                Self::new(grid, lo, hi, wavelengths_nm)
            }
            Surface::Plane { .. } => Err(FdtdError::InvalidMonitor("expected a box surface".into())),
        }
    }

    /// Whether the physical point lies strictly inside the box, at least half
    /// a cell from every face.
    pub fn encloses(&self, p_nm: [f64; 3], cell_size_nm: f64) -> bool {
        (0..3).all(|a| {
            p_nm[a] > (self.lo[a] as f64 + 0.5) * cell_size_nm - 1e-9
                && p_nm[a] < (self.hi[a] as f64 - 0.5) * cell_size_nm + 1e-9
        })
    }

    /// Net outward flux.
    pub fn flux(&self, wavelength_index: usize) -> f64 {
        self.faces.iter().map(|f| f.flux(wavelength_index)).sum()
    }
}

/// Any monitor the simulation can drive.
#[derive(Clone, Debug, PartialEq)]
pub enum DftMonitor {
    Plane(PlaneMonitor),
    Box(BoxMonitor),
}

impl DftMonitor {
    pub fn flux(&self, wavelength_index: usize) -> f64 {
        match self {
            DftMonitor::Plane(p) => p.flux(wavelength_index),
            DftMonitor::Box(b) => b.flux(wavelength_index),
        }
    }

    pub fn wavelengths(&self) -> Vec<f64> {
        let ph = match self {
            DftMonitor::Plane(p) => &p.phasors,
            DftMonitor::Box(b) => &b.faces[0].phasors,
        };
        ph.iter().map(|p| p.wavelength_nm).collect()
    }

    pub(crate) fn planes_mut(&mut self) -> Vec<&mut PlaneMonitor> {
        match self {
            DftMonitor::Plane(p) => vec![p],
            DftMonitor::Box(b) => b.faces.iter_mut().collect(),
        }
    }
}

/// `dt * exp(-i omega t)` for each wavelength.
pub(crate) fn phase_factors(wavelengths_nm: &[f64], t: f64, dt: f64) -> Vec<Complex64> {
    wavelengths_nm
        .iter()
        .map(|w| Complex64::from_polar(dt, -2.0 * PI * t / w))
        .collect()
}

/// Time-averaged Poynting flux through a cell-aligned surface.
///
/// `surface` is re-validated against the grid so a misaligned surface is
/// rejected even when it would round onto the monitor.
pub fn poynting_flux(grid: &GridSpec, monitor: &DftMonitor, surface: &Surface, wavelength_index: usize) -> Result<f64, FdtdError> {
    match (monitor, surface) {
        (DftMonitor::Plane(p), Surface::Plane { axis, position_nm, normal, .. }) => {
            let index = grid.aligned_index(*axis, *position_nm)?;
            if *axis != p.axis || index != p.index {
                return Err(FdtdError::InvalidMonitor("surface does not match the monitored plane".into()));
            }
            let flux = p.flux(wavelength_index) * p.normal.sign();
            Ok(flux * normal.sign())
        }
        (DftMonitor::Box(b), Surface::Box { lo_nm, hi_nm }) => {
            for a in 0..3 {
                if grid.aligned_index(a, lo_nm[a])? != b.lo[a] || grid.aligned_index(a, hi_nm[a])? != b.hi[a] {
                    return Err(FdtdError::InvalidMonitor("surface does not match the monitored box".into()));
                }
            }
            Ok(b.flux(wavelength_index))
        }
        _ => Err(FdtdError::InvalidMonitor("surface kind does not match monitor kind".into())),
    }
}
