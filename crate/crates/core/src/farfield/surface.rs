use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AngularSpectrum, FarfieldError, SpectrumBin};
use crate::fdtd::{tangential, BoxMonitor, GridSpec, MaterialMap};

type C = Complex64;
type V3 = [C; 3];

/// Background medium outside the projection box: ambient above
/// `interface_z_nm`, substrate below. `None` means homogeneous ambient.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HalfSpace {
    pub ambient_index: f64,
    pub substrate_index: f64,
    pub interface_z_nm: Option<f64>,
}

impl HalfSpace {
    pub fn homogeneous(index: f64) -> Self {
        Self { ambient_index: index, substrate_index: index, interface_z_nm: None }
    }

    pub fn is_upper(&self, z: f64) -> bool {
        self.interface_z_nm.is_none_or(|zs| z >= zs)
    }

    pub fn eps_at(&self, z: f64) -> f64 {
        let n = if self.is_upper(z) { self.ambient_index } else { self.substrate_index };
        n * n
    }
}

/// Polar Gauss-Legendre by uniform azimuth sampling of the upper
/// hemisphere, with the polar range split at `split_na` so that a cone of
/// that NA is integrated without straddling bins.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DirectionGrid {
    pub split_na: f64,
    /// Polar nodes per panel.
    pub polar_nodes: usize,
    pub azimuth_nodes: usize,
}

impl Default for DirectionGrid {
    fn default() -> Self {
        Self { split_na: super::DEFAULT_NA, polar_nodes: 24, azimuth_nodes: 48 }
    }
}

impl DirectionGrid {
    /// `(theta, phi, solid angle)` for every direction.
    pub fn directions(&self, ambient_index: f64) -> Result<Vec<(f64, f64, f64)>, FarfieldError> {
        if self.polar_nodes == 0 || self.azimuth_nodes == 0 {
            return Err(FarfieldError::InvalidDirections("need at least one node per axis".into()));
        }
        if !(self.split_na >= 0.0 && self.split_na < ambient_index) {
            return Err(FarfieldError::InvalidDirections(format!(
                "split NA {} must lie in [0, {ambient_index})",
                self.split_na
            )));
        }
        let u_split = (1.0 - (self.split_na / ambient_index).powi(2)).sqrt();
        let (x, w) = gauss_legendre(self.polar_nodes);
        let dphi = 2.0 * PI / self.azimuth_nodes as f64;
        let mut out = Vec::with_capacity(2 * self.polar_nodes * self.azimuth_nodes);
        for (a, b) in [(u_split, 1.0), (0.0, u_split)] {
            if b - a <= 0.0 {
                continue;
            }
            for (xi, wi) in x.iter().zip(&w) {
                let u = 0.5 * (a + b) + 0.5 * (b - a) * xi;
                let weight = 0.5 * (b - a) * wi * dphi;
                for m in 0..self.azimuth_nodes {
                    out.push((u.acos(), (m as f64 + 0.5) * dphi, weight));
                }
            }
        }
        Ok(out)
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p1 = z;
                p0 = 1.0;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

fn cross(a: [f64; 3], b: V3) -> V3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn real(v: [f64; 3]) -> V3 {
    v.map(|x| C::new(x, 0.0))
}

fn scale(v: V3, s: C) -> V3 {
    v.map(|x| x * s)
}

/// Background fields of a unit plane wave arriving from direction `r`
/// (travelling along `-r`) for one polarization: incident and reflected
/// waves above the interface, transmitted wave below.
struct Illumination {
    e_inc: V3,
    h_inc: V3,
    e_ref: V3,
    h_ref: V3,
    e_tr: V3,
    h_tr: V3,
    /// Unit polarization of the incident E field.
    pol: [f64; 3],
}

fn illuminations(bg: &HalfSpace, k0: f64, theta: f64, phi: f64) -> ([Illumination; 2], f64, f64) {
    let (n1, n2) = (bg.ambient_index, bg.substrate_index);
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    let r = [st * cp, st * sp, ct];
    let k1 = n1 * k0;
    let kt = k1 * st;
    let k1z = k1 * ct;
    let k2z = ((n2 * k0).powi(2) - kt * kt).max(0.0).sqrt();
    let ki = [-r[0], -r[1], -r[2]];
    let kr = [-r[0], -r[1], r[2]];
    let kt_hat = [-kt * cp / (n2 * k0), -kt * sp / (n2 * k0), -k2z / (n2 * k0)];
    let s = [-sp, cp, 0.0];

    let (e1, e2) = (n1 * n1, n2 * n2);
    let rs = (k1z - k2z) / (k1z + k2z);
    let rp = (e2 * k1z - e1 * k2z) / (e2 * k1z + e1 * k2z);

    // s: E along s, H = n k x E
    let es = real(s);
    let te = Illumination {
        e_inc: es,
        h_inc: scale(cross(ki, es), C::from(n1)),
        e_ref: scale(es, C::from(rs)),
        h_ref: scale(cross(kr, es), C::from(n1 * rs)),
        e_tr: scale(es, C::from(1.0 + rs)),
        h_tr: scale(cross(kt_hat, es), C::from(n2 * (1.0 + rs))),
        pol: s,
    };
    // p: H along s, E = -(1/n) k x H
    let hs = real(s);
    let e_of = |k: [f64; 3], h: V3, n: f64| scale(cross(k, h), C::from(-1.0 / n));
    let h_inc = scale(hs, C::from(n1));
    let h_ref = scale(hs, C::from(n1 * rp));
    let h_tr = scale(hs, C::from(n1 * (1.0 + rp)));
    let e_inc = e_of(ki, h_inc, n1);
    let pol = [e_inc[0].re, e_inc[1].re, e_inc[2].re];
    let tm = Illumination {
        e_inc,
        h_inc,
        e_ref: e_of(kr, h_ref, n1),
        h_ref,
        e_tr: e_of(kt_hat, h_tr, n2),
        h_tr,
        pol,
    };
    ([te, tm], k1z, k2z)
}

/// One equivalent-current sample on the box: contributes
/// `coef * (h_bg[alpha] * e_val - e_bg[beta] * h_val)`.
struct Sample {
    pos: [f64; 3],
    alpha: usize,
    beta: usize,
    e_val: C,
    h_val: C,
    coef: f64,
}

fn collect_samples(
    grid: &GridSpec,
    material: &MaterialMap,
    monitor: &BoxMonitor,
    wavelength_index: usize,
    bg: &HalfSpace,
) -> Result<Vec<Sample>, FarfieldError> {
    let dx = grid.cell_size_nm;
    let mut out = Vec::new();
    for face in &monitor.faces {
        let ph = face.phasors.get(wavelength_index).ok_or(FarfieldError::NoWavelength(wavelength_index))?;
        let (b, c) = tangential(face.axis);
        let sign = face.normal.sign();
        let [nb1, nc1] = ph.dims;
        for ib in 0..nb1 {
            for ic in 0..nc1 {
                let n = ib * nc1 + ic;
                let (wb, wc) = face.weights(ib, ic);
                let (pb, pc) = face.sample_positions(ib, ic);
                let idx = {
                    let node = face.node(ib, ic);
                    grid.index(node[0], node[1], node[2])
                };
                for (comp, p, w) in [(b, pb, wb), (c, pc, wc)] {
                    if w == 0.0 {
                        continue;
                    }
                    let eps = material.eps(comp, idx);
                    let expected = bg.eps_at(p[2]);
                    if (eps - expected).abs() > 1e-9 * expected {
                        return Err(FarfieldError::InDielectric { eps, expected, node: face.node(ib, ic) });
                    }
                }
                let coef = sign * dx * dx;
                if wb != 0.0 {
                    out.push(Sample { pos: pb, alpha: c, beta: b, e_val: ph.eb[n], h_val: ph.hc[n], coef: coef * wb });
                }
                if wc != 0.0 {
                    out.push(Sample { pos: pc, alpha: b, beta: c, e_val: ph.ec[n], h_val: ph.hb[n], coef: -coef * wc });
                }
            }
        }
    }
    Ok(out)
}

/// Far-field spectrum radiated into the upper half-space by the fields on
/// a closed box monitor.
///
/// Everything outside the box must match `background`; this is checked on
/// every box sample. Bin powers are `U(theta, phi) * dOmega` with `U` the
/// radiant intensity, and `plane_power` is their sum over the hemisphere.
pub fn project_box(
    grid: &GridSpec,
    material: &MaterialMap,
    monitor: &BoxMonitor,
    wavelength_index: usize,
    background: &HalfSpace,
    directions: &DirectionGrid,
) -> Result<AngularSpectrum, FarfieldError> {
    let wavelength_nm = monitor.faces[0]
        .phasors
        .get(wavelength_index)
        .ok_or(FarfieldError::NoWavelength(wavelength_index))?
        .wavelength_nm;
    let samples = collect_samples(grid, material, monitor, wavelength_index, background)?;
    let dirs = directions.directions(background.ambient_index)?;
    let k0 = 2.0 * PI / wavelength_nm;
    let n1 = background.ambient_index;
    let k1 = n1 * k0;
    let zs = background.interface_z_nm;
    // U = n1 w^2 / (32 pi^2) sum_p |A_p|^2 with w = k0 in normalized units
    let u_scale = n1 * k0 * k0 / (32.0 * PI * PI);

    let bins: Vec<SpectrumBin> = dirs
        .par_iter()
        .map(|&(theta, phi, d_omega)| {
            let (ill, k1z, k2z) = illuminations(background, k0, theta, phi);
            let (st, ct) = theta.sin_cos();
            let (sp, cp) = phi.sin_cos();
            let kx = k1 * st * cp;
            let ky = k1 * st * sp;
            debug_assert!((k1z - k1 * ct).abs() < 1e-12);
            let mut amp = [C::new(0.0, 0.0); 2];
            for s in &samples {
                let t = C::from_polar(1.0, kx * s.pos[0] + ky * s.pos[1]);
                let z = s.pos[2];
                for (p, il) in ill.iter().enumerate() {
                    let (e_bg, h_bg) = match zs {
                        Some(zs) if z < zs => {
                            let f = C::from_polar(1.0, k1z * zs + k2z * (z - zs)) * t;
                            (il.e_tr[s.beta] * f, il.h_tr[s.alpha] * f)
                        }
                        Some(zs) => {
                            let fi = C::from_polar(1.0, k1z * z) * t;
                            let fr = C::from_polar(1.0, k1z * (2.0 * zs - z)) * t;
                            (il.e_inc[s.beta] * fi + il.e_ref[s.beta] * fr, il.h_inc[s.alpha] * fi + il.h_ref[s.alpha] * fr)
                        }
                        None => {
                            let fi = C::from_polar(1.0, k1z * z) * t;
                            (il.e_inc[s.beta] * fi, il.h_inc[s.alpha] * fi)
                        }
                    };
                    amp[p] += s.coef * (h_bg * s.e_val - e_bg * s.h_val);
                }
            }
            let u = u_scale * (amp[0].norm_sqr() + amp[1].norm_sqr());
            let mut e = [C::new(0.0, 0.0); 3];
            for (p, il) in ill.iter().enumerate() {
                for a in 0..3 {
                    e[a] += amp[p] * il.pol[a];
                }
            }
            SpectrumBin { kx, ky, e, power: u * d_omega, solid_angle: d_omega }
        })
        .collect();
    let total = bins.iter().map(|b| b.power).sum();
    Ok(AngularSpectrum { wavelength_nm, ambient_index: n1, bins, plane_power: total })
}
