use rayon::prelude::*;

use super::cpml::{AxisProfile, PsiFields};
use super::grid::GridSpec;
use super::material::MaterialMap;

/// Staggered-grid field state.
///
/// All six components share the node indexing of [`GridSpec::index`]; each
/// component lives at its Yee offset from the node:
///
/// | component | offset (in cells) |
/// |-----------|-------------------|
/// | Ex | (1/2, 0, 0) |
/// | Ey | (0, 1/2, 0) |
/// | Ez | (0, 0, 1/2) |
/// | Hx | (0, 1/2, 1/2) |
/// | Hy | (1/2, 0, 1/2) |
/// | Hz | (1/2, 1/2, 0) |
///
/// Slots whose offset position falls outside the domain stay zero, as do E
/// components tangential to a PEC wall. Units are normalized
/// (`eps0 = mu0 = c = 1`), so E and H carry the same scale.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldLattice {
    extents: [usize; 3],
    pub(crate) e: [Vec<f32>; 3],
    pub(crate) h: [Vec<f32>; 3],
    step: u64,
}

impl FieldLattice {
    pub fn zeros(grid: &GridSpec) -> Self {
        let n = grid.len();
        Self {
            extents: grid.extents,
            e: [vec![0.0; n], vec![0.0; n], vec![0.0; n]],
            h: [vec![0.0; n], vec![0.0; n], vec![0.0; n]],
            step: 0,
        }
    }

    pub fn extents(&self) -> [usize; 3] {
        self.extents
    }

    /// Number of completed leapfrog steps.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn e(&self, axis: usize) -> &[f32] {
        &self.e[axis]
    }

    pub fn h(&self, axis: usize) -> &[f32] {
        &self.h[axis]
    }

    pub fn e_mut(&mut self, axis: usize) -> &mut [f32] {
        &mut self.e[axis]
    }

    pub fn is_all_zero(&self) -> bool {
        self.e.iter().chain(self.h.iter()).all(|c| c.iter().all(|&v| v == 0.0))
    }

    pub fn all_finite(&self) -> bool {
        self.e.iter().chain(self.h.iter()).all(|c| c.iter().all(|v| v.is_finite()))
    }

    pub(crate) fn advance_counter(&mut self) {
        self.step += 1;
    }
}

/// Update coefficients and CPML state for one grid and material map.
#[derive(Clone, Debug)]
pub(crate) struct Kernel {
    grid: GridSpec,
    /// `S / eps` per material id.
    e_coef: [f32; 256],
    h_coef: f32,
    prof: [Option<AxisProfile>; 3],
    psi: PsiFields,
}

/// Mutable views of one x-plane of the E-side arrays.
struct EPlane<'a> {
    i: usize,
    ex: &'a mut [f32],
    ey: &'a mut [f32],
    ez: &'a mut [f32],
    eyx: &'a mut [f32],
    ezx: &'a mut [f32],
    exy: &'a mut [f32],
    ezy: &'a mut [f32],
    exz: &'a mut [f32],
    eyz: &'a mut [f32],
}

struct HPlane<'a> {
    i: usize,
    hx: &'a mut [f32],
    hy: &'a mut [f32],
    hz: &'a mut [f32],
    hyx: &'a mut [f32],
    hzx: &'a mut [f32],
    hxy: &'a mut [f32],
    hzy: &'a mut [f32],
    hxz: &'a mut [f32],
    hyz: &'a mut [f32],
}

fn split_planes(v: &mut [f32], plane: usize, count: usize) -> std::vec::IntoIter<&mut [f32]> {
    if v.is_empty() {
        let mut out: Vec<&mut [f32]> = Vec::with_capacity(count);
        out.resize_with(count, Default::default);
        out.into_iter()
    } else {
        v.chunks_mut(plane).collect::<Vec<_>>().into_iter()
    }
}

#[inline]
fn row(v: &[f32], plane_start: usize, j: usize, nz: usize) -> &[f32] {
    let s = plane_start + j * nz;
    &v[s..s + nz]
}

/// The two index ranges of an axis that lie inside the PML, intersected with
/// `[lo, hi)`.
fn slab_ranges(n: usize, p: usize, lo: usize, hi: usize) -> [std::ops::Range<usize>; 2] {
    let a = lo..(p + 1).min(hi);
    let b = (n - 1 - p).max(lo)..hi;
    [a, b]
}

impl Kernel {
    pub(crate) fn new(grid: &GridSpec, material: &MaterialMap) -> Self {
        let s = grid.courant_factor as f32;
        let mut e_coef = [0.0f32; 256];
        for (id, eps) in material.table().iter().enumerate() {
            e_coef[id] = (grid.courant_factor / eps) as f32;
        }
        Self {
            grid: *grid,
            e_coef,
            h_coef: s,
            prof: [AxisProfile::new(grid, 0), AxisProfile::new(grid, 1), AxisProfile::new(grid, 2)],
            psi: PsiFields::new(grid),
        }
    }

    pub(crate) fn e_coef(&self, id: u8) -> f32 {
        self.e_coef[id as usize]
    }

    /// E^n -> E^{n+1} using H^{n+1/2}, including CPML corrections.
    pub(crate) fn update_e(&mut self, lat: &mut FieldLattice, material: &MaterialMap) {
        let [nx, ny, nz] = self.grid.extents;
        let per = ny * nz;
        let px = self.grid.is_periodic(0);
        let py = self.grid.is_periodic(1);
        let pml_p = self.grid.pml_cells;
        let ce = &self.e_coef;
        let prof = &self.prof;
        let ids = [material.ids(0), material.ids(1), material.ids(2)];
        let [hx, hy, hz] = &lat.h;
        let [ex, ey, ez] = &mut lat.e;
        let psi = &mut self.psi;

        let mut ex_it = split_planes(ex, per, nx);
        let mut ey_it = split_planes(ey, per, nx);
        let mut ez_it = split_planes(ez, per, nx);
        let mut eyx_it = split_planes(&mut psi.eyx, per, nx);
        let mut ezx_it = split_planes(&mut psi.ezx, per, nx);
        let mut exy_it = split_planes(&mut psi.exy, per, nx);
        let mut ezy_it = split_planes(&mut psi.ezy, per, nx);
        let mut exz_it = split_planes(&mut psi.exz, per, nx);
        let mut eyz_it = split_planes(&mut psi.eyz, per, nx);
        let planes: Vec<EPlane> = (0..nx)
            .map(|i| EPlane {
                i,
                ex: ex_it.next().unwrap(),
                ey: ey_it.next().unwrap(),
                ez: ez_it.next().unwrap(),
                eyx: eyx_it.next().unwrap(),
                ezx: ezx_it.next().unwrap(),
                exy: exy_it.next().unwrap(),
                ezy: ezy_it.next().unwrap(),
                exz: exz_it.next().unwrap(),
                eyz: eyz_it.next().unwrap(),
            })
            .collect();

        planes.into_par_iter().for_each(|pl| {
            let i = pl.i;
            let base = i * per;
            let im = if i > 0 {
                Some(i - 1)
            } else if px {
                Some(nx - 1)
            } else {
                None
            };
            let x_wall = !px && (i == 0 || i == nx - 1);
            let ex_plane = px || i < nx - 1;
            let x_slab = prof[0].as_ref().filter(|p| p.in_slab(i));

            for j in 0..ny {
                let jm = if j > 0 {
                    Some(j - 1)
                } else if py {
                    Some(ny - 1)
                } else {
                    None
                };
                let y_wall = !py && (j == 0 || j == ny - 1);
                let r = j * nz;
                let y_slab = prof[1].as_ref().filter(|p| p.in_slab(j));

                let hx_r = row(hx, base, j, nz);
                let hy_r = row(hy, base, j, nz);
                let hz_r = row(hz, base, j, nz);

                // Ex: d(Hz)/dy - d(Hy)/dz
                if let (true, false, Some(jm)) = (ex_plane, y_wall, jm) {
                    let hz_rm = row(hz, base, jm, nz);
                    let id = &ids[0][base + r..base + r + nz];
                    let exr = &mut pl.ex[r..r + nz];
                    {
                        let n = nz - 2;
                        let (e, id) = (&mut exr[1..nz - 1], &id[1..nz - 1]);
                        let (a, b) = (&hz_r[1..nz - 1], &hz_rm[1..nz - 1]);
                        let (c, d) = (&hy_r[1..nz - 1], &hy_r[..nz - 2]);
                        for k in 0..n {
                            e[k] += ce[id[k] as usize] * ((a[k] - b[k]) - (c[k] - d[k]));
                        }
                    }
                    if let Some(py_prof) = y_slab {
                        let (b, c) = (py_prof.e_b[j], py_prof.e_c[j]);
                        let psi_r = &mut pl.exy[r..r + nz];
                        for k in 1..nz - 1 {
                            psi_r[k] = b * psi_r[k] + c * (hz_r[k] - hz_rm[k]);
                            exr[k] += ce[id[k] as usize] * psi_r[k];
                        }
                    }
                    if let Some(pz) = &prof[2] {
                        let psi_r = &mut pl.exz[r..r + nz];
                        for range in slab_ranges(nz, pml_p, 1, nz - 1) {
                            for k in range {
                                psi_r[k] = pz.e_b[k] * psi_r[k] + pz.e_c[k] * (hy_r[k] - hy_r[k - 1]);
                                exr[k] -= ce[id[k] as usize] * psi_r[k];
                            }
                        }
                    }
                }

                // Ey: d(Hx)/dz - d(Hz)/dx
                if let (false, Some(im), true) = (x_wall, im, py || j < ny - 1) {
                    let hz_m = row(hz, im * per, j, nz);
                    let id = &ids[1][base + r..base + r + nz];
                    let eyr = &mut pl.ey[r..r + nz];
                    {
                        let n = nz - 2;
                        let (e, id) = (&mut eyr[1..nz - 1], &id[1..nz - 1]);
                        let (a, b) = (&hx_r[1..nz - 1], &hx_r[..nz - 2]);
                        let (c, d) = (&hz_r[1..nz - 1], &hz_m[1..nz - 1]);
                        for k in 0..n {
                            e[k] += ce[id[k] as usize] * ((a[k] - b[k]) - (c[k] - d[k]));
                        }
                    }
                    if let Some(pxp) = x_slab {
                        let (b, c) = (pxp.e_b[i], pxp.e_c[i]);
                        let psi_r = &mut pl.eyx[r..r + nz];
                        for k in 1..nz - 1 {
                            psi_r[k] = b * psi_r[k] + c * (hz_r[k] - hz_m[k]);
                            eyr[k] -= ce[id[k] as usize] * psi_r[k];
                        }
                    }
                    if let Some(pz) = &prof[2] {
                        let psi_r = &mut pl.eyz[r..r + nz];
                        for range in slab_ranges(nz, pml_p, 1, nz - 1) {
                            for k in range {
                                psi_r[k] = pz.e_b[k] * psi_r[k] + pz.e_c[k] * (hx_r[k] - hx_r[k - 1]);
                                eyr[k] += ce[id[k] as usize] * psi_r[k];
                            }
                        }
                    }
                }

                // Ez: d(Hy)/dx - d(Hx)/dy
                if let (false, false, Some(im), Some(jm)) = (x_wall, y_wall, im, jm) {
                    let hy_m = row(hy, im * per, j, nz);
                    let hx_rm = row(hx, base, jm, nz);
                    let id = &ids[2][base + r..base + r + nz];
                    let ezr = &mut pl.ez[r..r + nz];
                    {
                        let n = nz - 1;
                        let (e, id) = (&mut ezr[..n], &id[..n]);
                        let (a, b) = (&hy_r[..n], &hy_m[..n]);
                        let (c, d) = (&hx_r[..n], &hx_rm[..n]);
                        for k in 0..n {
                            e[k] += ce[id[k] as usize] * ((a[k] - b[k]) - (c[k] - d[k]));
                        }
                    }
                    if let Some(pxp) = x_slab {
                        let (b, c) = (pxp.e_b[i], pxp.e_c[i]);
                        let psi_r = &mut pl.ezx[r..r + nz];
                        for k in 0..nz - 1 {
                            psi_r[k] = b * psi_r[k] + c * (hy_r[k] - hy_m[k]);
                            ezr[k] += ce[id[k] as usize] * psi_r[k];
                        }
                    }
                    if let Some(pyp) = y_slab {
                        let (b, c) = (pyp.e_b[j], pyp.e_c[j]);
                        let psi_r = &mut pl.ezy[r..r + nz];
                        for k in 0..nz - 1 {
                            psi_r[k] = b * psi_r[k] + c * (hx_r[k] - hx_rm[k]);
                            ezr[k] -= ce[id[k] as usize] * psi_r[k];
                        }
                    }
                }
            }
        });
    }

    /// H^{n+1/2} -> H^{n+3/2} using E^{n+1}, including CPML corrections.
    pub(crate) fn update_h(&mut self, lat: &mut FieldLattice) {
        let [nx, ny, nz] = self.grid.extents;
        let per = ny * nz;
        let px = self.grid.is_periodic(0);
        let py = self.grid.is_periodic(1);
        let pml_p = self.grid.pml_cells;
        let s = self.h_coef;
        let prof = &self.prof;
        let [ex, ey, ez] = &lat.e;
        let [hx, hy, hz] = &mut lat.h;
        let psi = &mut self.psi;

        let mut hx_it = split_planes(hx, per, nx);
        let mut hy_it = split_planes(hy, per, nx);
        let mut hz_it = split_planes(hz, per, nx);
        let mut hyx_it = split_planes(&mut psi.hyx, per, nx);
        let mut hzx_it = split_planes(&mut psi.hzx, per, nx);
        let mut hxy_it = split_planes(&mut psi.hxy, per, nx);
        let mut hzy_it = split_planes(&mut psi.hzy, per, nx);
        let mut hxz_it = split_planes(&mut psi.hxz, per, nx);
        let mut hyz_it = split_planes(&mut psi.hyz, per, nx);
        let planes: Vec<HPlane> = (0..nx)
            .map(|i| HPlane {
                i,
                hx: hx_it.next().unwrap(),
                hy: hy_it.next().unwrap(),
                hz: hz_it.next().unwrap(),
                hyx: hyx_it.next().unwrap(),
                hzx: hzx_it.next().unwrap(),
                hxy: hxy_it.next().unwrap(),
                hzy: hzy_it.next().unwrap(),
                hxz: hxz_it.next().unwrap(),
                hyz: hyz_it.next().unwrap(),
            })
            .collect();

        planes.into_par_iter().for_each(|pl| {
            let i = pl.i;
            let base = i * per;
            let ip = if i + 1 < nx {
                Some(i + 1)
            } else if px {
                Some(0)
            } else {
                None
            };
            let x_slab = prof[0].as_ref().filter(|p| p.in_slab(i));

            for j in 0..ny {
                let jp = if j + 1 < ny {
                    Some(j + 1)
                } else if py {
                    Some(0)
                } else {
                    None
                };
                let r = j * nz;
                let y_slab = prof[1].as_ref().filter(|p| p.in_slab(j));
                let ex_r = row(ex, base, j, nz);
                let ey_r = row(ey, base, j, nz);
                let ez_r = row(ez, base, j, nz);

                // Hx: d(Ez)/dy - d(Ey)/dz
                if let Some(jp) = jp {
                    let ez_rp = row(ez, base, jp, nz);
                    let hxr = &mut pl.hx[r..r + nz];
                    {
                        let n = nz - 1;
                        let h = &mut hxr[..n];
                        let (a, b) = (&ez_rp[..n], &ez_r[..n]);
                        let (c, d) = (&ey_r[1..], &ey_r[..n]);
                        for k in 0..n {
                            h[k] -= s * ((a[k] - b[k]) - (c[k] - d[k]));
                        }
                    }
                    if let Some(pyp) = y_slab {
                        let (b, c) = (pyp.h_b[j], pyp.h_c[j]);
                        let psi_r = &mut pl.hxy[r..r + nz];
                        for k in 0..nz - 1 {
                            psi_r[k] = b * psi_r[k] + c * (ez_rp[k] - ez_r[k]);
                            hxr[k] -= s * psi_r[k];
                        }
                    }
                    if let Some(pz) = &prof[2] {
                        let psi_r = &mut pl.hxz[r..r + nz];
                        for range in slab_ranges(nz, pml_p, 0, nz - 1) {
                            for k in range {
                                psi_r[k] = pz.h_b[k] * psi_r[k] + pz.h_c[k] * (ey_r[k + 1] - ey_r[k]);
                                hxr[k] += s * psi_r[k];
                            }
                        }
                    }
                }

                if let Some(ip) = ip {
                    let pbase = ip * per;
                    // Hy: d(Ex)/dz - d(Ez)/dx
                    let ez_p = row(ez, pbase, j, nz);
                    let hyr = &mut pl.hy[r..r + nz];
                    {
                        let n = nz - 1;
                        let h = &mut hyr[..n];
                        let (a, b) = (&ex_r[1..], &ex_r[..n]);
                        let (c, d) = (&ez_p[..n], &ez_r[..n]);
                        for k in 0..n {
                            h[k] -= s * ((a[k] - b[k]) - (c[k] - d[k]));
                        }
                    }
                    if let Some(pxp) = x_slab {
                        let (b, c) = (pxp.h_b[i], pxp.h_c[i]);
                        let psi_r = &mut pl.hyx[r..r + nz];
                        for k in 0..nz - 1 {
                            psi_r[k] = b * psi_r[k] + c * (ez_p[k] - ez_r[k]);
                            hyr[k] += s * psi_r[k];
                        }
                    }
                    if let Some(pz) = &prof[2] {
                        let psi_r = &mut pl.hyz[r..r + nz];
                        for range in slab_ranges(nz, pml_p, 0, nz - 1) {
                            for k in range {
                                psi_r[k] = pz.h_b[k] * psi_r[k] + pz.h_c[k] * (ex_r[k + 1] - ex_r[k]);
                                hyr[k] -= s * psi_r[k];
                            }
                        }
                    }

                    // Hz: d(Ey)/dx - d(Ex)/dy
                    if let Some(jp) = jp {
                        let ey_p = row(ey, pbase, j, nz);
                        let ex_rp = row(ex, base, jp, nz);
                        let hzr = &mut pl.hz[r..r + nz];
                        for k in 0..nz {
                            hzr[k] -= s * ((ey_p[k] - ey_r[k]) - (ex_rp[k] - ex_r[k]));
                        }
                        if let Some(pxp) = x_slab {
                            let (b, c) = (pxp.h_b[i], pxp.h_c[i]);
                            let psi_r = &mut pl.hzx[r..r + nz];
                            for k in 0..nz {
                                psi_r[k] = b * psi_r[k] + c * (ey_p[k] - ey_r[k]);
                                hzr[k] -= s * psi_r[k];
                            }
                        }
                        if let Some(pyp) = y_slab {
                            let (b, c) = (pyp.h_b[j], pyp.h_c[j]);
                            let psi_r = &mut pl.hzy[r..r + nz];
                            for k in 0..nz {
                                psi_r[k] = b * psi_r[k] + c * (ex_rp[k] - ex_r[k]);
                                hzr[k] += s * psi_r[k];
                            }
                        }
                    }
                }
            }
        });
        lat.advance_counter();
    }

    /// Electromagnetic energy `1/2 (eps E^2 + H^2)` summed over the PML-free
    /// interior, per unit cell volume. Partial sums are formed per x-plane
    /// and reduced in plane order, so the result does not depend on how the
    /// planes were scheduled.
    pub(crate) fn interior_energy(&self, lat: &FieldLattice, material: &MaterialMap) -> f64 {
        let g = &self.grid;
        let (i0, i1) = g.interior(0);
        let (j0, j1) = g.interior(1);
        let (k0, k1) = g.interior(2);
        let table = material.table();
        let partial: Vec<f64> = (i0..=i1)
            .into_par_iter()
            .map(|i| {
                let mut acc = 0.0f64;
                for j in j0..=j1 {
                    let base = g.index(i, j, 0);
                    for c in 0..3 {
                        let e = &lat.e[c][base..base + g.extents[2]];
                        let h = &lat.h[c][base..base + g.extents[2]];
                        let id = &material.ids(c)[base..base + g.extents[2]];
                        for k in k0..=k1 {
                            let ev = e[k] as f64;
                            let hv = h[k] as f64;
                            acc += table[id[k] as usize] * ev * ev + hv * hv;
                        }
                    }
                }
                acc
            })
            .collect();
        0.5 * partial.iter().sum::<f64>()
    }
}
