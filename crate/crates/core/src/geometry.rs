//! Scene construction for the three structure classes: bulk half-space,
//! cylindrical nanopillar on a half-space, and a fully etched half-space.
//!
//! The substrate is semi-infinite: it runs through the bottom and side PML.
//! The top dielectric surface is placed [`TOP_MARGIN_NM`] below the upper
//! PML, and the structure is centred laterally in the grid.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fdtd::{FdtdError, GridSpec, MaterialMap};

/// Dielectric-free gap between the highest surface and the upper PML.
pub const TOP_MARGIN_NM: f64 = 500.0;
pub const SIC_INDEX: f64 = 2.60;
pub const DEFAULT_PILLAR_HEIGHT_NM: f64 = 1000.0;
pub const DEFAULT_BULK_DEPTH_NM: f64 = 500.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid structure: {0}")]
    InvalidStructure(String),
    #[error("structure does not fit the grid: {0}")]
    Clipped(String),
    #[error("empty diameter list")]
    EmptySweep,
    #[error(transparent)]
    Fdtd(#[from] FdtdError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StructureKind {
    Bulk,
    Pillar,
    Etched,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureSpec {
    pub kind: StructureKind,
    #[serde(default)]
    pub pillar_diameter_nm: f64,
    #[serde(default = "default_height")]
    pub pillar_height_nm: f64,
    /// Depth of the emitter below the top surface. `None` selects the
    /// default: 500 nm for bulk, half the pillar height for a pillar.
    #[serde(default)]
    pub emitter_depth_nm: Option<f64>,
    #[serde(default = "default_substrate")]
    pub substrate_index: f64,
    #[serde(default = "default_ambient")]
    pub ambient_index: f64,
}

fn default_height() -> f64 {
    DEFAULT_PILLAR_HEIGHT_NM
}
fn default_substrate() -> f64 {
    SIC_INDEX
}
fn default_ambient() -> f64 {
    1.0
}

impl StructureSpec {
    pub fn bulk() -> Self {
        Self {
            kind: StructureKind::Bulk,
            pillar_diameter_nm: 0.0,
            pillar_height_nm: DEFAULT_PILLAR_HEIGHT_NM,
            emitter_depth_nm: None,
            substrate_index: SIC_INDEX,
            ambient_index: 1.0,
        }
    }

    pub fn pillar(diameter_nm: f64) -> Self {
        Self { kind: StructureKind::Pillar, pillar_diameter_nm: diameter_nm, ..Self::bulk() }
    }

    pub fn etched() -> Self {
        Self { kind: StructureKind::Etched, ..Self::bulk() }
    }

    pub fn emitter_depth(&self) -> Option<f64> {
        match self.kind {
            StructureKind::Etched => None,
            StructureKind::Bulk => Some(self.emitter_depth_nm.unwrap_or(DEFAULT_BULK_DEPTH_NM)),
            StructureKind::Pillar => Some(self.emitter_depth_nm.unwrap_or(0.5 * self.pillar_height_nm)),
        }
    }

    /// Short label used in file names and reports, e.g. `bulk`, `pillar-800`.
    pub fn label(&self) -> String {
        match self.kind {
            StructureKind::Bulk => "bulk".into(),
            StructureKind::Etched => "etched".into(),
            StructureKind::Pillar => format!("pillar-{}", self.pillar_diameter_nm),
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |m: String| Err(GeometryError::InvalidStructure(m));
        if !(self.substrate_index >= 1.0 && self.ambient_index >= 1.0) {
            return bad("refractive indices must be at least 1".into());
        }
        if self.kind != StructureKind::Bulk && !(self.pillar_height_nm > 0.0) {
            return bad(format!("pillar height must be positive, got {}", self.pillar_height_nm));
        }
        if self.kind == StructureKind::Pillar && !(self.pillar_diameter_nm > 0.0) {
            return bad(format!("pillar diameter must be positive, got {}", self.pillar_diameter_nm));
        }
        if let Some(depth) = self.emitter_depth() {
            let max = if self.kind == StructureKind::Pillar { self.pillar_height_nm } else { f64::INFINITY };
            if !(depth > 0.0 && depth < max) {
                return bad(format!("emitter depth {depth} nm is not inside the dielectric"));
            }
        }
        Ok(())
    }
}

/// Voxelized scene plus the emitter location, all in grid-frame nm.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub material: MaterialMap,
    pub dipole_position_nm: Option<[f64; 3]>,
    /// Height of the highest dielectric surface.
    pub top_surface_nm: f64,
    /// Height of the half-space surface (pillar base for pillars).
    pub substrate_top_nm: f64,
    pub axis_nm: [f64; 2],
}

/// Vertical layout of a structure in grid-frame nm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Layout {
    pub top_surface_nm: f64,
    pub substrate_top_nm: f64,
    pub dipole_z_nm: Option<f64>,
    pub axis_nm: [f64; 2],
}

pub fn layout(spec: &StructureSpec, grid: &GridSpec) -> Layout {
    let dx = grid.cell_size_nm;
    let (_, z_hi) = grid.interior_nm(2);
    let top = z_hi - TOP_MARGIN_NM;
    let substrate_top = match spec.kind {
        StructureKind::Bulk => top,
        StructureKind::Pillar | StructureKind::Etched => top - spec.pillar_height_nm,
    };
    // The etched top sits where a pillar's base would, keeping the same frame.
    let dipole_z = spec.emitter_depth().map(|d| top - d);
    Layout {
        top_surface_nm: if spec.kind == StructureKind::Etched { substrate_top } else { top },
        substrate_top_nm: substrate_top,
        dipole_z_nm: dipole_z,
        axis_nm: [0.5 * (grid.extents[0] - 1) as f64 * dx, 0.5 * (grid.extents[1] - 1) as f64 * dx],
    }
}

/// Voxelizes `spec` onto `grid` and places the emitter.
pub fn build_scene(spec: &StructureSpec, grid: &GridSpec) -> Result<Scene, GeometryError> {
    spec.validate()?;
    grid.validate()?;
    let lay = layout(spec, grid);
    let (z_lo, _) = grid.interior_nm(2);
    if lay.top_surface_nm <= z_lo {
        return Err(GeometryError::Clipped("top surface falls into the bottom PML".into()));
    }
    let radius = 0.5 * spec.pillar_diameter_nm;
    if spec.kind == StructureKind::Pillar {
        if lay.substrate_top_nm <= z_lo {
            return Err(GeometryError::Clipped("pillar base falls into the bottom PML".into()));
        }
        for axis in 0..2 {
            let (lo, hi) = grid.interior_nm(axis);
            if lay.axis_nm[axis] - radius <= lo || lay.axis_nm[axis] + radius >= hi {
                return Err(GeometryError::Clipped(format!(
                    "pillar of diameter {} nm reaches the PML on axis {axis}",
                    spec.pillar_diameter_nm
                )));
            }
        }
    }
    let dipole = match lay.dipole_z_nm {
        Some(z) => {
            if z <= z_lo {
                return Err(GeometryError::Clipped("emitter falls into the bottom PML".into()));
            }
            Some([lay.axis_nm[0], lay.axis_nm[1], z])
        }
        None => None,
    };

    let eps_sub = spec.substrate_index * spec.substrate_index;
    let eps_amb = spec.ambient_index * spec.ambient_index;
    let r2 = radius * radius;
    let is_pillar = spec.kind == StructureKind::Pillar;
    let (sub_top, top, axis) = (lay.substrate_top_nm, lay.top_surface_nm, lay.axis_nm);
    let material = MaterialMap::from_fn(grid, |p| {
        if p[2] < sub_top {
            return eps_sub;
        }
        if is_pillar && p[2] < top {
            let dx = p[0] - axis[0];
            let dy = p[1] - axis[1];
            // Samples exactly on the sidewall count as dielectric.
            if dx * dx + dy * dy <= r2 * (1.0 + 1e-12) {
                return eps_sub;
            }
        }
        eps_amb
    })?;

    Ok(Scene {
        material,
        dipole_position_nm: dipole,
        top_surface_nm: lay.top_surface_nm,
        substrate_top_nm: lay.substrate_top_nm,
        axis_nm: lay.axis_nm,
    })
}

/// Sizing rules for a collection-efficiency grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSizing {
    pub cell_size_nm: f64,
    /// Half width of the PML-free region around the pillar axis.
    pub lateral_half_width_nm: f64,
    /// Dielectric kept between the lowest feature of interest (emitter or
    /// pillar base) and the bottom PML.
    pub substrate_clearance_nm: f64,
    pub courant_factor: f64,
    pub pml_cells: usize,
    pub pml: crate::fdtd::PmlParams,
}

impl Default for GridSizing {
    fn default() -> Self {
        Self {
            cell_size_nm: crate::fdtd::DEFAULT_CELL_SIZE_NM,
            lateral_half_width_nm: 1000.0,
            substrate_clearance_nm: 200.0,
            courant_factor: 0.5,
            pml_cells: 10,
            pml: Default::default(),
        }
    }
}

impl GridSizing {
    /// Smallest grid holding `spec` under these rules.
    pub fn grid_for(&self, spec: &StructureSpec) -> GridSpec {
        let dx = self.cell_size_nm;
        let half = (self.lateral_half_width_nm / dx).ceil() as usize;
        let lateral = 2 * half + 1 + 2 * self.pml_cells;
        let height = match spec.kind {
            StructureKind::Bulk => spec.emitter_depth().unwrap_or(DEFAULT_BULK_DEPTH_NM),
            StructureKind::Pillar => spec.pillar_height_nm.max(spec.emitter_depth().unwrap_or(0.0)),
            StructureKind::Etched => spec.pillar_height_nm,
        };
        let interior = self.substrate_clearance_nm + height + TOP_MARGIN_NM;
        let nz = (interior / dx).ceil() as usize + 1 + 2 * self.pml_cells;
        let mut g = GridSpec::new(dx, [lateral, lateral, nz]);
        g.courant_factor = self.courant_factor;
        g.pml_cells = self.pml_cells;
        g.pml = self.pml;
        g
    }
}

/// One spec per diameter, everything else copied from `template`.
pub fn diameter_sweep(template: &StructureSpec, diameters_nm: &[f64], max_diameter_nm: f64) -> Result<Vec<StructureSpec>, GeometryError> {
    if diameters_nm.is_empty() {
        return Err(GeometryError::EmptySweep);
    }
    diameters_nm
        .iter()
        .map(|&d| {
            if !(d > 0.0 && d < max_diameter_nm) {
                return Err(GeometryError::InvalidStructure(format!(
                    "diameter {d} nm outside (0, {max_diameter_nm})"
                )));
            }
            Ok(StructureSpec { kind: StructureKind::Pillar, pillar_diameter_nm: d, ..*template })
        })
        .collect()
}

/// 300, 400, ..., 1100 nm.
pub fn default_diameters() -> Vec<f64> {
    (3..=11).map(|h| h as f64 * 100.0).collect()
}
