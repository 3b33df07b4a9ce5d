//! Confocal photoluminescence scans over a chip with bulk, pillar and
//! etched regions.
//!
//! Lengths are in µm except pillar diameters (nm, as in the collection
//! curve).

use std::collections::BTreeMap;
use std::io::Write;

use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nvmodel::{Catalog, CollectionCurve};
use crate::rng::substream;
use crate::spectra::{site_efficiencies, BasalCollection, SpectraError};
use crate::tcspc::DetectorModel;

#[derive(Debug, Error)]
pub enum ScanError {
    #[error("invalid scene: {0}")]
    Scene(String),
    #[error("invalid beam: {0}")]
    Beam(String),
    #[error(transparent)]
    Collection(#[from] SpectraError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Bulk,
    Pillar { diameter_nm: f64 },
    Etched,
}

/// Raster of region labels.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneMap {
    pub cell_um: f64,
    pub nx: usize,
    pub ny: usize,
    pub labels: Vec<Region>,
    pub pitch_um: Option<f64>,
    /// Emitters per µm² (uniform); scales every count.
    pub density: f64,
}

pub const DEFAULT_DENSITY: f64 = 5000.0;

impl SceneMap {
    pub fn uniform(width_um: f64, height_um: f64, cell_um: f64, region: Region) -> Result<Self, ScanError> {
        Self::from_fn(width_um, height_um, cell_um, |_, _| region)
    }

    pub fn from_fn(width_um: f64, height_um: f64, cell_um: f64, f: impl Fn(f64, f64) -> Region) -> Result<Self, ScanError> {
        if !(width_um > 0.0 && height_um > 0.0 && cell_um > 0.0) {
            return Err(ScanError::Scene("extent and cell size must be positive".into()));
        }
        let nx = (width_um / cell_um).round().max(1.0) as usize;
        let ny = (height_um / cell_um).round().max(1.0) as usize;
        let mut labels = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                labels.push(f((i as f64 + 0.5) * cell_um, (j as f64 + 0.5) * cell_um));
            }
        }
        Ok(Self { cell_um, nx, ny, labels, pitch_um: None, density: DEFAULT_DENSITY })
    }

    /// Square pillar lattice on an etched floor for `x < bulk_from_um`,
    /// unetched bulk beyond.
    pub fn pillar_field(
        width_um: f64,
        height_um: f64,
        cell_um: f64,
        pitch_um: f64,
        diameter_nm: f64,
        bulk_from_um: f64,
    ) -> Result<Self, ScanError> {
        if !(pitch_um * 1e3 > diameter_nm && diameter_nm > 0.0) {
            return Err(ScanError::Scene(format!("pitch {pitch_um} µm must exceed diameter {diameter_nm} nm")));
        }
        let r = 0.5 * diameter_nm * 1e-3;
        let mut s = Self::from_fn(width_um, height_um, cell_um, |x, y| {
            if x >= bulk_from_um {
                return Region::Bulk;
            }
            let dx = x - pitch_um * ((x / pitch_um).floor() + 0.5);
            let dy = y - pitch_um * ((y / pitch_um).floor() + 0.5);
            if dx * dx + dy * dy <= r * r {
                Region::Pillar { diameter_nm }
            } else {
                Region::Etched
            }
        })?;
        s.pitch_um = Some(pitch_um);
        Ok(s)
    }

    pub fn width_um(&self) -> f64 {
        self.nx as f64 * self.cell_um
    }

    pub fn height_um(&self) -> f64 {
        self.ny as f64 * self.cell_um
    }

    /// Region at a point; outside the map the nearest edge cell applies.
    pub fn region_at(&self, x: f64, y: f64) -> Region {
        let i = ((x / self.cell_um).floor().max(0.0) as usize).min(self.nx - 1);
        let j = ((y / self.cell_um).floor().max(0.0) as usize).min(self.ny - 1);
        self.labels[j * self.nx + i]
    }

    pub fn diameters(&self) -> Vec<f64> {
        let mut d: Vec<f64> = self
            .labels
            .iter()
            .filter_map(|r| match r {
                Region::Pillar { diameter_nm } => Some(*diameter_nm),
                _ => None,
            })
            .collect();
        d.sort_by(f64::total_cmp);
        d.dedup();
        d
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BeamSpec {
    pub fwhm_um: f64,
    pub step_um: f64,
}

impl Default for BeamSpec {
    fn default() -> Self {
        Self { fwhm_um: 1.2, step_um: 0.2 }
    }
}

impl BeamSpec {
    pub fn validate(&self) -> Result<(), ScanError> {
        if !(self.fwhm_um > 0.0 && self.step_um > 0.0) {
            return Err(ScanError::Beam("FWHM and step must be positive".into()));
        }
        if self.step_um > self.fwhm_um {
            return Err(ScanError::Beam(format!("step {} µm exceeds the {} µm spot", self.step_um, self.fwhm_um)));
        }
        Ok(())
    }

    /// Integral of the peak-normalized Gaussian profile, µm².
    pub fn area_um2(&self) -> f64 {
        std::f64::consts::PI * self.fwhm_um * self.fwhm_um / (4.0 * std::f64::consts::LN_2)
    }
}

/// Ensemble collection efficiency per region: the mean over catalog sites.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionEfficiencies {
    pub bulk: f64,
    pub pillars: BTreeMap<u64, f64>,
}

impl RegionEfficiencies {
    pub fn from_curve(curve: &CollectionCurve, diameters: &[f64], catalog: &Catalog, basal: BasalCollection) -> Result<Self, ScanError> {
        let mean = |d: Option<f64>| -> Result<f64, ScanError> {
            let e = site_efficiencies(curve, d, catalog, basal)?;
            Ok(e.values().sum::<f64>() / e.len().max(1) as f64)
        };
        let mut pillars = BTreeMap::new();
        for &d in diameters {
            pillars.insert(d.to_bits(), mean(Some(d))?);
        }
        Ok(Self { bulk: mean(None)?, pillars })
    }

    pub fn of(&self, r: Region) -> f64 {
        match r {
            Region::Bulk => self.bulk,
            Region::Pillar { diameter_nm } => self.pillars.get(&diameter_nm.to_bits()).copied().unwrap_or(0.0),
            Region::Etched => 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanImage {
    pub nx: usize,
    pub ny: usize,
    pub step_um: f64,
    pub counts: Vec<f64>,
    pub expected: Vec<f64>,
    /// Beam-weighted emitting area under each pixel, µm².
    pub emitter_area: Vec<f64>,
    /// Region under each pixel center.
    pub regions: Vec<Region>,
    pub dark_per_pixel: f64,
}

/// Beam-weighted mean of `f` over the map around `(x, y)`.
fn beam_average(scene: &SceneMap, beam: &BeamSpec, x: f64, y: f64, f: impl Fn(Region) -> f64) -> f64 {
    let k = 4.0 * std::f64::consts::LN_2 / (beam.fwhm_um * beam.fwhm_um);
    let reach = 2.5 * beam.fwhm_um;
    let n = (reach / scene.cell_um).ceil() as i64;
    let (ci, cj) = ((x / scene.cell_um).floor() as i64, (y / scene.cell_um).floor() as i64);
    let (mut num, mut den) = (0.0, 0.0);
    for dj in -n..=n {
        for di in -n..=n {
            let cx = (ci + di) as f64 * scene.cell_um + 0.5 * scene.cell_um;
            let cy = (cj + dj) as f64 * scene.cell_um + 0.5 * scene.cell_um;
            let r2 = (cx - x).powi(2) + (cy - y).powi(2);
            let w = (-k * r2).exp();
            num += w * f(scene.region_at(cx, cy));
            den += w;
        }
    }
    if den > 0.0 {
        num / den
    } else {
        f(scene.region_at(x, y))
    }
}

/// Renders a raster scan. Expected counts per pixel are dwell × density ×
/// the beam-weighted collection efficiency integrated over the spot, plus
/// detector darks; each pixel is Poisson sampled from its own substream.
pub fn render_scan(
    scene: &SceneMap,
    beam: &BeamSpec,
    eff: &RegionEfficiencies,
    dwell_ms: f64,
    det: &DetectorModel,
    seed: u64,
) -> Result<ScanImage, ScanError> {
    beam.validate()?;
    if !(dwell_ms > 0.0) {
        return Err(ScanError::Scene("dwell must be positive".into()));
    }
    for d in scene.diameters() {
        if !eff.pillars.contains_key(&d.to_bits()) {
            return Err(ScanError::Scene(format!("no collection efficiency for {d} nm pillars")));
        }
    }
    let nx = (scene.width_um() / beam.step_um).floor().max(1.0) as usize;
    let ny = (scene.height_um() / beam.step_um).floor().max(1.0) as usize;
    let area = beam.area_um2();
    let dark = det.dark_rate_hz * dwell_ms * 1e-3;
    let pixels: Vec<(f64, f64, f64, Region)> = (0..nx * ny)
        .into_par_iter()
        .map(|p| {
            let (i, j) = (p % nx, p / nx);
            let (x, y) = ((i as f64 + 0.5) * beam.step_um, (j as f64 + 0.5) * beam.step_um);
            let signal = dwell_ms * scene.density * area * beam_average(scene, beam, x, y, |r| eff.of(r));
            let emitters = area * beam_average(scene, beam, x, y, |r| if r == Region::Etched { 0.0 } else { 1.0 });
            let mean = signal + dark;
            let mut rng = substream(seed, p as u64);
            let n = if mean > 0.0 { Poisson::new(mean).map_or(mean, |d| d.sample(&mut rng)) } else { 0.0 };
            (n, mean, emitters, scene.region_at(x, y))
        })
        .collect();
    Ok(ScanImage {
        nx,
        ny,
        step_um: beam.step_um,
        counts: pixels.iter().map(|p| p.0).collect(),
        expected: pixels.iter().map(|p| p.1).collect(),
        emitter_area: pixels.iter().map(|p| p.2).collect(),
        regions: pixels.iter().map(|p| p.3).collect(),
        dark_per_pixel: dark,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub pixels: usize,
    pub mean_counts: f64,
    pub mean_emitter_area: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanSummary {
    pub pillar: ClassStats,
    pub bulk: ClassStats,
    pub etched: ClassStats,
    /// Dark-subtracted counts per unit emitting area, pillar over bulk.
    pub normalized_ratio: f64,
    pub normalized_ratio_err: f64,
}

impl ScanImage {
    pub fn summary(&self) -> ScanSummary {
        let stats = |keep: &dyn Fn(Region) -> bool| {
            let idx: Vec<usize> = (0..self.counts.len()).filter(|&p| keep(self.regions[p])).collect();
            let n = idx.len();
            if n == 0 {
                return ClassStats::default();
            }
            ClassStats {
                pixels: n,
                mean_counts: idx.iter().map(|&p| self.counts[p]).sum::<f64>() / n as f64,
                mean_emitter_area: idx.iter().map(|&p| self.emitter_area[p]).sum::<f64>() / n as f64,
            }
        };
        let pillar = stats(&|r| matches!(r, Region::Pillar { .. }));
        let bulk = stats(&|r| r == Region::Bulk);
        let etched = stats(&|r| r == Region::Etched);
        let (sp, sb) = (pillar.mean_counts - self.dark_per_pixel, bulk.mean_counts - self.dark_per_pixel);
        let ratio = (sp / pillar.mean_emitter_area) / (sb / bulk.mean_emitter_area);
        // Poisson: the variance of a class mean is its mean over the pixel count
        let rel2 = pillar.mean_counts / pillar.pixels.max(1) as f64 / (sp * sp) + bulk.mean_counts / bulk.pixels.max(1) as f64 / (sb * sb);
        ScanSummary { pillar, bulk, etched, normalized_ratio: ratio, normalized_ratio_err: ratio.abs() * rel2.sqrt() }
    }

    /// Counts as a matrix, one CSV row per raster line.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), ScanError> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        for j in 0..self.ny {
            w.write_record(self.counts[j * self.nx..(j + 1) * self.nx].iter().map(|c| format!("{c}")))?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(input: R, step_um: f64) -> Result<Self, ScanError> {
        let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(input);
        let mut counts = Vec::new();
        let mut nx = 0;
        let mut ny = 0;
        for rec in r.records() {
            let rec = rec?;
            nx = rec.len();
            for v in rec.iter() {
                counts.push(v.trim().parse::<f64>().map_err(|_| ScanError::Scene(format!("bad value {v:?}")))?);
            }
            ny += 1;
        }
        let n = counts.len();
        Ok(Self {
            nx,
            ny,
            step_um,
            counts,
            expected: vec![0.0; n],
            emitter_area: vec![0.0; n],
            regions: vec![Region::Etched; n],
            dark_per_pixel: 0.0,
        })
    }

    /// 8-bit grayscale, linear from the image minimum to maximum.
    pub fn to_gray8(&self) -> Vec<u8> {
        let lo = self.counts.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.counts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        self.counts.iter().map(|c| ((c - lo) / span * 255.0).round() as u8).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nvmodel::CurvePoint;

    fn eff(pillar: f64) -> RegionEfficiencies {
        RegionEfficiencies { bulk: 0.02, pillars: [(600f64.to_bits(), pillar)].into_iter().collect() }
    }

    fn field() -> SceneMap {
        SceneMap::pillar_field(20.0, 10.0, 0.05, 5.0, 600.0, 10.0).unwrap()
    }

    #[test]
    fn etched_scene_is_dark_only() {
        let s = SceneMap::uniform(6.0, 6.0, 0.1, Region::Etched).unwrap();
        let img = render_scan(&s, &BeamSpec::default(), &eff(0.2), 1000.0, &DetectorModel::default(), 1).unwrap();
        assert!(img.expected.iter().all(|e| (*e - 100.0).abs() < 1e-9));
        let mean = img.counts.iter().sum::<f64>() / img.counts.len() as f64;
        assert!((mean - 100.0).abs() < 4.0 * (100.0 / img.counts.len() as f64).sqrt());
    }

    #[test]
    fn bulk_scene_is_uniform_for_any_spot() {
        let s = SceneMap::uniform(4.0, 4.0, 0.05, Region::Bulk).unwrap();
        for fwhm in [1.2, 0.3, 0.01] {
            let beam = BeamSpec { fwhm_um: fwhm, step_um: fwhm.min(0.2) };
            let img = render_scan(&s, &beam, &eff(0.2), 10.0, &DetectorModel::default(), 2).unwrap();
            let e0 = img.expected[0];
            assert!(img.expected.iter().all(|e| (e - e0).abs() < 1e-9 * e0));
        }
    }

    #[test]
    fn regions_order_and_ratio() {
        let img = render_scan(&field(), &BeamSpec::default(), &eff(0.25), 10.0, &DetectorModel::default(), 3).unwrap();
        let s = img.summary();
        assert!(s.pillar.pixels > 0 && s.bulk.pixels > 0 && s.etched.pixels > 0);
        assert!(s.pillar.mean_counts > s.bulk.mean_counts && s.bulk.mean_counts > s.etched.mean_counts);
        assert!((s.normalized_ratio - 12.5).abs() < 3.0 * s.normalized_ratio_err, "{} +- {}", s.normalized_ratio, s.normalized_ratio_err);
    }

    #[test]
    fn mean_is_linear_in_dwell() {
        let det = DetectorModel::default();
        let a = render_scan(&field(), &BeamSpec::default(), &eff(0.25), 5.0, &det, 4).unwrap();
        let b = render_scan(&field(), &BeamSpec::default(), &eff(0.25), 20.0, &det, 5).unwrap();
        let signal = |i: &ScanImage| i.counts.iter().sum::<f64>() / i.counts.len() as f64 - i.dark_per_pixel;
        let (sa, sb) = (signal(&a), signal(&b));
        let err = (sb / a.counts.len() as f64).sqrt() * 4.0 + 4.0 * 4.0 * (sa / a.counts.len() as f64).sqrt();
        assert!((sb - 4.0 * sa).abs() < err, "{sa} {sb}");
    }

    #[test]
    fn deterministic_and_round_trips() {
        let beam = BeamSpec { fwhm_um: 1.2, step_um: 0.5 };
        let a = render_scan(&field(), &beam, &eff(0.25), 10.0, &DetectorModel::default(), 6).unwrap();
        let b = render_scan(&field(), &beam, &eff(0.25), 10.0, &DetectorModel::default(), 6).unwrap();
        assert_eq!(a.counts, b.counts);
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        let back = ScanImage::read_csv(&buf[..], 0.5).unwrap();
        assert_eq!((back.nx, back.ny), (a.nx, a.ny));
        assert_eq!(back.counts, a.counts);
        assert_eq!(a.to_gray8().len(), a.nx * a.ny);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(SceneMap::pillar_field(10.0, 10.0, 0.05, 0.5, 600.0, 5.0).is_err());
        assert!(BeamSpec { fwhm_um: 1.0, step_um: 2.0 }.validate().is_err());
        let missing = RegionEfficiencies { bulk: 0.02, pillars: BTreeMap::new() };
        assert!(render_scan(&field(), &BeamSpec::default(), &missing, 10.0, &DetectorModel::default(), 0).is_err());
    }

    #[test]
    fn efficiencies_from_curve() {
        let curve = CollectionCurve::new(Some(CurvePoint { c0: 0.002, c90: 0.031 }), vec![(600.0, CurvePoint { c0: 0.2, c90: 0.32 })]).unwrap();
        let e = RegionEfficiencies::from_curve(&curve, &[600.0], &Catalog::default(), BasalCollection::PairAverage).unwrap();
        assert!(e.of(Region::Pillar { diameter_nm: 600.0 }) > e.of(Region::Bulk));
        assert_eq!(e.of(Region::Etched), 0.0);
        assert!(RegionEfficiencies::from_curve(&curve, &[700.0], &Catalog::default(), BasalCollection::PairAverage).is_err());
    }
}
