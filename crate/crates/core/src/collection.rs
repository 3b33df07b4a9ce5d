//! End-to-end collection-efficiency runs: scene, dipole, monitors, FDTD,
//! far-field projection.
//!
//! Three monitors are recorded per run: a small closed box around the
//! dipole (emitted power), a closed projection box enclosing the dipole and
//! the pillar (far field into the upper half-space), and a `+z` plane over
//! the full PML-free cross-section at the top face of the projection box
//! (plane-wave spectrum, kept for comparison).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::farfield::{
    collection_efficiency, near_to_far, project_box, AngularSpectrum, CollectionResult, DipoleAxis, DirectionGrid,
    FarfieldError, HalfSpace, ObjectiveSpec, ProjectionOptions,
};
use crate::fdtd::{
    run_until_decayed, BoxMonitor, DecayCriterion, DftMonitor, DipoleSource, FdtdError, GaussianPulse, GridSpec,
    MaterialMap, Normal, PlaneMonitor, RunWarning, Simulation,
};
use crate::geometry::{build_scene, GeometryError, GridSizing, StructureKind, StructureSpec};

/// Height of the far-field plane above the highest surface.
pub const MONITOR_HEIGHT_NM: f64 = 250.0;

#[derive(Debug, Error)]
pub enum CollectionError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Fdtd(#[from] FdtdError),
    #[error(transparent)]
    Farfield(#[from] FarfieldError),
    #[error("structure {0} has no emitter")]
    NoEmitter(String),
    #[error("projection box does not fit in the PML-free region: {0}")]
    BoxTooLarge(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollectionSettings {
    pub sizing: GridSizing,
    pub pulse: GaussianPulse,
    pub decay: DecayCriterion,
    pub objective: ObjectiveSpec,
    pub monitor_height_nm: f64,
    /// Half-size, in cells, of the closed box that measures emitted power.
    pub source_box_cells: usize,
    /// Clearance between the projection box and the pillar sidewall (or the
    /// dipole, for bulk) and below the lowest feature.
    pub projection_margin_nm: f64,
    pub directions: DirectionGrid,
    pub plane_projection: ProjectionOptions,
}

impl Default for CollectionSettings {
    fn default() -> Self {
        Self {
            sizing: GridSizing::default(),
            pulse: GaussianPulse::default(),
            decay: DecayCriterion::default(),
            objective: ObjectiveSpec::default(),
            monitor_height_nm: MONITOR_HEIGHT_NM,
            source_box_cells: 3,
            projection_margin_nm: 100.0,
            directions: DirectionGrid::default(),
            plane_projection: ProjectionOptions::default(),
        }
    }
}

impl CollectionSettings {
    pub fn with_cell_size(mut self, cell_size_nm: f64) -> Self {
        self.sizing.cell_size_nm = cell_size_nm;
        self
    }
}

#[derive(Clone, Debug)]
pub struct CollectionRun {
    pub result: CollectionResult,
    /// Far field from the projection box.
    pub spectrum: AngularSpectrum,
    /// Collection computed from the plane spectrum instead, for comparison.
    pub plane_efficiency: f64,
    pub steps: u64,
    pub warning: Option<RunWarning>,
    /// Closed-box flux around the dipole (total emitted power).
    pub box_flux: f64,
    /// Flux through the top plane.
    pub plane_flux: f64,
    pub decayed_fraction: f64,
    pub grid: GridSpec,
    pub material: MaterialMap,
    pub plane: PlaneMonitor,
    pub projection_box: BoxMonitor,
}

/// Simulates one dipole orientation in one structure.
pub fn simulate_collection(
    spec: &StructureSpec,
    orientation: DipoleAxis,
    settings: &CollectionSettings,
) -> Result<CollectionRun, CollectionError> {
    let grid = settings.sizing.grid_for(spec);
    let scene = build_scene(spec, &grid)?;
    let position = scene.dipole_position_nm.ok_or_else(|| CollectionError::NoEmitter(spec.label()))?;
    let dx = grid.cell_size_nm;

    let mut source = DipoleSource::new(position, orientation.vector());
    source.pulse = settings.pulse;
    let wavelengths = [settings.pulse.center_wavelength_nm];

    let node = position.map(|p| (p / dx).round() as usize);
    let h = settings.source_box_cells.max(1);
    let lo = node.map(|n| n - h);
    let mut hi = node.map(|n| n + h);
    // the driven edge of a vertical dipole sits half a cell above the node
    hi[2] += 1;
    let source_box = BoxMonitor::new(&grid, lo, hi, &wavelengths)?;

    let plane_index = ((scene.top_surface_nm + settings.monitor_height_nm) / dx).round() as usize;
    let (x0, x1) = grid.interior(0);
    let (y0, y1) = grid.interior(1);
    let plane = PlaneMonitor::new(&grid, 2, plane_index, [x0, y0], [x1, y1], Normal::Positive, &wavelengths)?;

    let radius = if spec.kind == StructureKind::Pillar { 0.5 * spec.pillar_diameter_nm } else { 0.0 };
    let half = ((radius + settings.projection_margin_nm) / dx).ceil() as usize;
    let axis = [(scene.axis_nm[0] / dx).round() as usize, (scene.axis_nm[1] / dx).round() as usize];
    let bottom_nm = scene.substrate_top_nm.min(position[2]) - settings.projection_margin_nm;
    let p_lo = [axis[0].saturating_sub(half), axis[1].saturating_sub(half), (bottom_nm / dx).floor().max(0.0) as usize];
    let p_hi = [axis[0] + half, axis[1] + half, plane_index];
    for a in 0..3 {
        let (l, u) = grid.interior(a);
        if p_lo[a] <= l || p_hi[a] >= u {
            return Err(CollectionError::BoxTooLarge(format!(
                "axis {a}: {}..={} vs PML-free {l}..={u}",
                p_lo[a], p_hi[a]
            )));
        }
    }
    let projection_box = BoxMonitor::new(&grid, p_lo, p_hi, &wavelengths)?;

    let mut sim = Simulation::new(grid, scene.material.clone())?;
    sim.add_source(source)?;
    sim.add_monitor(DftMonitor::Box(source_box))?;
    sim.add_monitor(DftMonitor::Box(projection_box))?;
    sim.add_monitor(DftMonitor::Plane(plane))?;
    let run = run_until_decayed(sim, &settings.decay)?;

    let box_flux = run.monitors[0].flux(0);
    let (DftMonitor::Box(pbox), DftMonitor::Plane(plane)) = (&run.monitors[1], &run.monitors[2]) else {
        unreachable!("monitor order is fixed above")
    };
    let background = HalfSpace {
        ambient_index: spec.ambient_index,
        substrate_index: spec.substrate_index,
        interface_z_nm: Some(scene.substrate_top_nm),
    };
    let directions = DirectionGrid { split_na: settings.objective.numerical_aperture, ..settings.directions };
    let spectrum = project_box(&grid, &scene.material, pbox, 0, &background, &directions)?;
    let result = collection_efficiency(&spectrum, &settings.objective, box_flux, *spec, orientation)?;

    let plane_spectrum = near_to_far(&grid, &scene.material, plane, 0, spec.ambient_index, &settings.plane_projection)?;
    let plane_efficiency = plane_spectrum.power_within(settings.objective.numerical_aperture * plane_spectrum.k0()) / box_flux;

    Ok(CollectionRun {
        result,
        spectrum,
        plane_efficiency,
        steps: run.steps,
        warning: run.warning,
        box_flux,
        plane_flux: plane.flux(0),
        decayed_fraction: run.decayed_fraction(),
        grid,
        material: scene.material,
        plane: plane.clone(),
        projection_box: pbox.clone(),
    })
}
