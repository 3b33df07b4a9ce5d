use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{AngularSpectrum, FarfieldError, SpectrumBin};
use crate::fdtd::{GridSpec, MaterialMap, Normal, PlaneMonitor};

pub const DEFAULT_PADDED_SIZE: usize = 2048;

/// Transform settings for [`near_to_far`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProjectionOptions {
    /// Minimum transform length per axis; raised to the sample count.
    pub padded_size: usize,
    /// Fraction of each half-width, measured in from the plane edge, over
    /// which the fields are rolled off with a cosine taper. Zero keeps the
    /// hard truncation.
    pub taper_fraction: f64,
}

impl Default for ProjectionOptions {
    fn default() -> Self {
        Self { padded_size: DEFAULT_PADDED_SIZE, taper_fraction: 0.0 }
    }
}

fn taper_weight(i: usize, n: usize, frac: f64) -> f64 {
    if frac <= 0.0 || n < 3 {
        return 1.0;
    }
    let frac = frac.min(1.0);
    let half = 0.5 * (n - 1) as f64;
    let d = (i as f64 - half).abs() / half;
    if d <= 1.0 - frac {
        1.0
    } else {
        0.5 * (1.0 + (PI * (d - 1.0 + frac) / frac).cos())
    }
}

/// Signed frequency of FFT bin `m`.
fn bin_k(m: usize, n: usize, dk: f64) -> f64 {
    if m <= n / 2 {
        m as f64 * dk
    } else {
        -((n - m) as f64) * dk
    }
}

fn bins_within(n: usize, dk: f64, kmax: f64) -> Vec<usize> {
    (0..n).filter(|&m| bin_k(m, n, dk).abs() <= kmax * (1.0 + 1e-12)).collect()
}

/// Angular spectrum of a `+z` plane monitor at one of its wavelengths.
///
/// Bin power is `1/2 Re(Ex Hy* - Ey Hx*)` of the transformed fields, scaled
/// so that the bins of the full transform sum to the plane flux. Every
/// sample of the plane, and of the adjacent planes entering the H average,
/// must be in the ambient medium.
pub fn near_to_far(
    grid: &GridSpec,
    material: &MaterialMap,
    plane: &PlaneMonitor,
    wavelength_index: usize,
    ambient_index: f64,
    options: &ProjectionOptions,
) -> Result<AngularSpectrum, FarfieldError> {
    if plane.axis != 2 || plane.normal != Normal::Positive {
        return Err(FarfieldError::NotUpward);
    }
    let ph = plane.phasors.get(wavelength_index).ok_or(FarfieldError::NoWavelength(wavelength_index))?;
    let eps_amb = ambient_index * ambient_index;
    for k in plane.index - 1..=plane.index + 1 {
        for i in plane.lo[0]..=plane.hi[0] {
            for j in plane.lo[1]..=plane.hi[1] {
                let idx = grid.index(i, j, k);
                for c in 0..3 {
                    let eps = material.eps(c, idx);
                    if (eps - eps_amb).abs() > 1e-12 {
                        return Err(FarfieldError::InDielectric { eps, expected: eps_amb, node: [i, j, k] });
                    }
                }
            }
        }
    }

    let [nb, nc] = ph.dims;
    let dx = plane.cell_size_nm;
    let padded = [options.padded_size.max(nb), options.padded_size.max(nc)];
    let dk = [2.0 * PI / (padded[0] as f64 * dx), 2.0 * PI / (padded[1] as f64 * dx)];
    let k = 2.0 * PI / ph.wavelength_nm * ambient_index;
    let mx = bins_within(padded[0], dk[0], k);
    let my = bins_within(padded[1], dk[1], k);
    let wb: Vec<f64> = (0..nb).map(|i| taper_weight(i, nb, options.taper_fraction)).collect();
    let wc: Vec<f64> = (0..nc).map(|i| taper_weight(i, nc, options.taper_fraction)).collect();

    let mut planner = FftPlanner::<f64>::new();
    let fft_y = planner.plan_fft_forward(padded[1]);
    let fft_x = planner.plan_fft_forward(padded[0]);
    let zero = Complex64::new(0.0, 0.0);
    // rows along y keeping only the propagating ky columns, then those
    // columns along x
    let transform = |f: &[Complex64]| -> Vec<Complex64> {
        let mut cols = vec![zero; my.len() * padded[0]];
        let mut row = vec![zero; padded[1]];
        for ib in 0..nb {
            row.iter_mut().for_each(|v| *v = zero);
            for ic in 0..nc {
                row[ic] = f[ib * nc + ic] * (wb[ib] * wc[ic]);
            }
            fft_y.process(&mut row);
            for (q, &m) in my.iter().enumerate() {
                cols[q * padded[0] + ib] = row[m];
            }
        }
        let mut out = vec![zero; mx.len() * my.len()];
        for q in 0..my.len() {
            let col = &mut cols[q * padded[0]..(q + 1) * padded[0]];
            fft_x.process(col);
            for (p, &m) in mx.iter().enumerate() {
                out[p * my.len() + q] = col[m];
            }
        }
        out
    };
    let ex = transform(&ph.eb);
    let ey = transform(&ph.ec);
    let hx = transform(&ph.hb);
    let hy = transform(&ph.hc);

    let norm = 0.5 * dx * dx / (padded[0] as f64 * padded[1] as f64);
    let mut bins = Vec::new();
    for (p, &ix) in mx.iter().enumerate() {
        // phasors carry exp(+i w t), so a bin at +q holds the wave exp(-i (-q) x)
        let kx = -bin_k(ix, padded[0], dk[0]);
        for (q, &iy) in my.iter().enumerate() {
            let ky = -bin_k(iy, padded[1], dk[1]);
            if kx * kx + ky * ky > k * k {
                continue;
            }
            let n = p * my.len() + q;
            let power = norm * (ex[n] * hy[n].conj() - ey[n] * hx[n].conj()).re;
            let kz = (k * k - kx * kx - ky * ky).sqrt().max(1e-12 * k);
            let ez = -(ex[n] * kx + ey[n] * ky) / kz;
            bins.push(SpectrumBin { kx, ky, e: [ex[n], ey[n], ez], power, solid_angle: dk[0] * dk[1] / (k * kz) });
        }
    }
    let plane_power = 0.5
        * dx
        * dx
        * (0..nb * nc)
            .map(|n| {
                let w = wb[n / nc] * wc[n % nc];
                w * w * (ph.eb[n] * ph.hc[n].conj() - ph.ec[n] * ph.hb[n].conj()).re
            })
            .sum::<f64>();

    Ok(AngularSpectrum { wavelength_nm: ph.wavelength_nm, ambient_index, bins, plane_power })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fdtd::PlanePhasors;

    type Quad = (Complex64, Complex64, Complex64, Complex64);

    fn plane_with(grid: &GridSpec, f: impl Fn(f64, f64) -> Quad) -> PlaneMonitor {
        let (lo, hi) = (grid.interior(0), grid.interior(1));
        let mut p = PlaneMonitor::new(grid, 2, grid.extents[2] / 2, [lo.0, hi.0], [lo.1, hi.1], Normal::Positive, &[1300.0]).unwrap();
        let dims = p.phasors[0].dims;
        let mut ph = PlanePhasors { wavelength_nm: 1300.0, dims, eb: vec![], ec: vec![], hb: vec![], hc: vec![] };
        for ib in 0..dims[0] {
            for ic in 0..dims[1] {
                let (ex, ey, hx, hy) = f(ib as f64 * grid.cell_size_nm, ic as f64 * grid.cell_size_nm);
                ph.eb.push(ex);
                ph.ec.push(ey);
                ph.hb.push(hx);
                ph.hc.push(hy);
            }
        }
        p.phasors[0] = ph;
        p
    }

    fn grid() -> GridSpec {
        GridSpec::new(25.0, [41, 41, 31])
    }

    fn opts(padded_size: usize) -> ProjectionOptions {
        ProjectionOptions { padded_size, taper_fraction: 0.0 }
    }

    #[test]
    fn normal_plane_wave_lands_in_central_bin() {
        let g = grid();
        let one = Complex64::new(1.0, 0.0);
        let zero = Complex64::new(0.0, 0.0);
        let p = plane_with(&g, |_, _| (one, zero, zero, one));
        let s = near_to_far(&g, &MaterialMap::vacuum(&g), &p, 0, 1.0, &opts(21)).unwrap();
        let centre = s.bins.iter().find(|b| b.kx == 0.0 && b.ky == 0.0).unwrap();
        assert!((centre.power - s.plane_power).abs() < 1e-9 * s.plane_power);
        let rest: f64 = s.bins.iter().filter(|b| b.kx != 0.0 || b.ky != 0.0).map(|b| b.power.abs()).sum();
        assert!(rest < 1e-9 * s.plane_power);
    }

    #[test]
    fn oblique_wave_maps_to_its_direction() {
        // exp(-i kx x) travels toward +x under the exp(+i w t) convention
        let g = grid();
        let zero = Complex64::new(0.0, 0.0);
        let n = 256;
        let dk = 2.0 * PI / (n as f64 * 25.0);
        let kx = 3.0 * dk;
        let p = plane_with(&g, |x, _| {
            let e = Complex64::from_polar(1.0, -kx * x);
            (e, zero, zero, e)
        });
        let s = near_to_far(&g, &MaterialMap::vacuum(&g), &p, 0, 1.0, &opts(n)).unwrap();
        let best = s.bins.iter().max_by(|a, b| a.power.total_cmp(&b.power)).unwrap();
        assert!((best.kx - kx).abs() < 1e-12 && best.ky == 0.0);
    }

    #[test]
    fn parseval_on_full_transform() {
        let g = grid();
        let p = plane_with(&g, |x, y| {
            let e = Complex64::from_polar((-(x - 400.0).powi(2) / 2e4).exp(), 0.01 * y);
            (e, e * 0.3, -e * 0.2, e * 1.1)
        });
        // a huge ambient index makes every bin propagating
        let m = MaterialMap::from_fn(&g, |_| 3600.0).unwrap();
        let all = near_to_far(&g, &m, &p, 0, 60.0, &opts(32)).unwrap();
        assert_eq!(all.bins.len(), 32 * 32);
        let sum: f64 = all.bins.iter().map(|b| b.power).sum();
        assert!((sum - all.plane_power).abs() < 1e-10 * all.plane_power.abs());
    }

    #[test]
    fn rejects_dielectric_and_downward_planes() {
        let g = grid();
        let zero = Complex64::new(0.0, 0.0);
        let p = plane_with(&g, |_, _| (zero, zero, zero, zero));
        let m = MaterialMap::from_fn(&g, |x| if x[2] < 400.0 { 6.76 } else { 1.0 }).unwrap();
        assert!(matches!(near_to_far(&g, &m, &p, 0, 1.0, &opts(64)), Err(FarfieldError::InDielectric { .. })));
        let down = p.reversed();
        assert!(matches!(near_to_far(&g, &MaterialMap::vacuum(&g), &down, 0, 1.0, &opts(64)), Err(FarfieldError::NotUpward)));
    }

    #[test]
    fn taper_is_flat_inside_and_zero_at_edges() {
        assert_eq!(taper_weight(5, 11, 0.0), 1.0);
        assert_eq!(taper_weight(5, 11, 0.4), 1.0);
        assert!(taper_weight(0, 11, 0.4).abs() < 1e-15);
        assert!(taper_weight(10, 11, 0.4).abs() < 1e-15);
        assert!((taper_weight(1, 11, 0.4) - taper_weight(9, 11, 0.4)).abs() < 1e-15);
    }
}
