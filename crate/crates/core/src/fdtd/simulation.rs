use serde::{Deserialize, Serialize};

use super::kernel::{FieldLattice, Kernel};
use super::monitor::{phase_factors, DftMonitor};
use super::{DipoleSource, FdtdError, GridSpec, MaterialMap};

/// A configured FDTD scene that can be stepped.
#[derive(Clone, Debug)]
pub struct Simulation {
    grid: GridSpec,
    material: MaterialMap,
    kernel: Kernel,
    lattice: FieldLattice,
    sources: Vec<DipoleSource>,
    sites: Vec<(usize, usize, f64)>,
    monitors: Vec<DftMonitor>,
    /// Full NaN/Inf scan every this many steps (0 disables the scan in
    /// `step`; `run_until_decayed` still checks at every energy probe).
    pub nan_check_interval: u64,
}

impl Simulation {
    pub fn new(grid: GridSpec, material: MaterialMap) -> Result<Self, FdtdError> {
        grid.validate()?;
        if material.extents() != grid.extents {
            return Err(FdtdError::InvalidMaterial("material map extents differ from the grid".into()));
        }
        let kernel = Kernel::new(&grid, &material);
        let lattice = FieldLattice::zeros(&grid);
        Ok(Self {
            grid,
            material,
            kernel,
            lattice,
            sources: Vec::new(),
            sites: Vec::new(),
            monitors: Vec::new(),
            nan_check_interval: 0,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn material(&self) -> &MaterialMap {
        &self.material
    }

    pub fn lattice(&self) -> &FieldLattice {
        &self.lattice
    }

    pub fn lattice_mut(&mut self) -> &mut FieldLattice {
        &mut self.lattice
    }

    pub fn monitors(&self) -> &[DftMonitor] {
        &self.monitors
    }

    pub fn into_monitors(self) -> Vec<DftMonitor> {
        self.monitors
    }

    pub fn add_source(&mut self, source: DipoleSource) -> Result<(), FdtdError> {
        source.validate(&self.grid)?;
        for (c, node, w) in source.injection_sites(&self.grid) {
            let idx = self.grid.index(node[0], node[1], node[2]);
            self.sites.push((c, idx, w));
        }
        self.sources.push(source);
        Ok(())
    }

    /// Adds a monitor; returns its index. Monitors may not sit on a source
    /// edge, and boxes must enclose every source they are meant to measure
    /// (checked by the caller through [`super::BoxMonitor::encloses`]).
    pub fn add_monitor(&mut self, monitor: DftMonitor) -> Result<usize, FdtdError> {
        for s in &self.sources {
            for c in 0..3 {
                if let Some(p) = s.edge_position(&self.grid, c) {
                    let on_surface = match &monitor {
                        DftMonitor::Plane(pl) => pl.touches(p),
                        DftMonitor::Box(b) => !b.encloses(p, self.grid.cell_size_nm) && b.faces.iter().any(|f| f.touches(p)),
                    };
                    if on_surface {
                        return Err(FdtdError::InvalidMonitor(format!(
                            "monitor surface passes through the source edge at {p:?}"
                        )));
                    }
                }
            }
        }
        self.monitors.push(monitor);
        Ok(self.monitors.len() - 1)
    }

    /// Time of the E field after `n` completed steps.
    fn e_time(&self, n: u64) -> f64 {
        n as f64 * self.grid.dt()
    }

    /// One leapfrog update: E (with source currents), E-monitor accumulation,
    /// H, H-monitor accumulation.
    pub fn step(&mut self) -> Result<(), FdtdError> {
        let n = self.lattice.step_count();
        let dt = self.grid.dt();
        self.kernel.update_e(&mut self.lattice, &self.material);

        let t_mid = self.e_time(n) + 0.5 * dt;
        if !self.sites.is_empty() {
            // Sources are grouped by DipoleSource in insertion order.
            let mut site = 0;
            for src in &self.sources {
                let j = src.pulse.value(t_mid);
                let count = src.injection_sites(&self.grid).len();
                for &(c, idx, w) in &self.sites[site..site + count] {
                    let coef = self.kernel.e_coef(self.material.ids(c)[idx]);
                    self.lattice.e_mut(c)[idx] -= coef * (w * j) as f32;
                }
                site += count;
            }
        }

        let grid = self.grid;
        if !self.monitors.is_empty() {
            let wl: Vec<Vec<f64>> = self.monitors.iter().map(|m| m.wavelengths()).collect();
            let t_e = self.e_time(n + 1);
            for (m, w) in self.monitors.iter_mut().zip(&wl) {
                let phase = phase_factors(w, t_e, dt);
                for p in m.planes_mut() {
                    p.accumulate_e(&grid, &self.lattice, &phase);
                }
            }
            self.kernel.update_h(&mut self.lattice);
            let t_h = t_e + 0.5 * dt;
            for (m, w) in self.monitors.iter_mut().zip(&wl) {
                let phase = phase_factors(w, t_h, dt);
                for p in m.planes_mut() {
                    p.accumulate_h(&grid, &self.lattice, &phase);
                }
            }
        } else {
            self.kernel.update_h(&mut self.lattice);
        }

        if self.nan_check_interval > 0 && self.lattice.step_count() % self.nan_check_interval == 0 {
            self.check_finite()?;
        }
        Ok(())
    }

    pub fn check_finite(&self) -> Result<(), FdtdError> {
        if self.lattice.all_finite() {
            Ok(())
        } else {
            Err(FdtdError::Unstable { step: self.lattice.step_count() })
        }
    }

    /// Field energy in the PML-free interior.
    pub fn interior_energy(&self) -> f64 {
        self.kernel.interior_energy(&self.lattice, &self.material)
    }

    /// Latest time at which any source is still on.
    pub fn source_end_time(&self) -> f64 {
        self.sources.iter().map(|s| s.pulse.end_time()).fold(0.0, f64::max)
    }

    /// Steps needed to get past the end of every source pulse.
    pub fn source_steps(&self) -> u64 {
        (self.source_end_time() / self.grid.dt()).ceil() as u64
    }
}

/// Termination settings for [`run_until_decayed`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecayCriterion {
    /// Stop once interior energy falls below this fraction of its peak.
    pub energy_fraction: f64,
    pub max_steps: u64,
    /// Energy probe interval in steps.
    pub check_interval: u64,
}

impl Default for DecayCriterion {
    fn default() -> Self {
        Self { energy_fraction: 1e-5, max_steps: 40_000, check_interval: 50 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunWarning {
    /// The step cap was reached before the energy decayed.
    StepCapReached,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub monitors: Vec<DftMonitor>,
    pub steps: u64,
    pub peak_energy: f64,
    pub final_energy: f64,
    /// `(step, energy)` at every probe.
    pub energy_trace: Vec<(u64, f64)>,
    pub warning: Option<RunWarning>,
}

impl RunResult {
    pub fn decayed_fraction(&self) -> f64 {
        if self.peak_energy > 0.0 {
            self.final_energy / self.peak_energy
        } else {
            0.0
        }
    }
}

/// Steps the simulation until the interior energy has decayed or the step
/// cap is hit, then returns the frozen monitor phasors.
pub fn run_until_decayed(mut sim: Simulation, criterion: &DecayCriterion) -> Result<RunResult, FdtdError> {
    let interval = criterion.check_interval.max(1);
    let source_steps = sim.source_steps();
    let mut peak = 0.0f64;
    let mut trace = Vec::new();
    let mut warning = None;
    let mut energy = 0.0;
    loop {
        let n = sim.lattice().step_count();
        if n >= criterion.max_steps {
            warning = Some(RunWarning::StepCapReached);
            break;
        }
        sim.step()?;
        let n = n + 1;
        if n % interval == 0 {
            energy = sim.interior_energy();
            if !energy.is_finite() {
                return Err(FdtdError::Unstable { step: n });
            }
            trace.push((n, energy));
            peak = peak.max(energy);
            if n >= source_steps && energy <= criterion.energy_fraction * peak {
                break;
            }
        }
    }
    let steps = sim.lattice().step_count();
    sim.check_finite()?;
    Ok(RunResult { monitors: sim.into_monitors(), steps, peak_energy: peak, final_energy: energy, energy_trace: trace, warning })
}
