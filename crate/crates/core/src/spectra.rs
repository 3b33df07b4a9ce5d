//! Photoluminescence spectra: forward synthesis from a collection curve, the
//! five-ZPL plus two-sideband Lorentzian decomposition, and pillar/bulk
//! comparison of the fitted lines.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fitkit::{eval_lorentzian_sum, lm_fit, FitError, FitProblem, FitResult, LorentzianPeak, LorentzianSum};
use crate::nvmodel::{mix_point, site_collection_band, Catalog, CollectionCurve, NvError, NvSite, SiteClass, SiteLabel};

pub const ZPL_MATCH_NM: f64 = 3.0;
pub const SIDEBAND_CENTERS_NM: [f64; 2] = [1190.0, 1260.0];

#[derive(Debug, Error)]
pub enum SpectraError {
    #[error("invalid spectrum: {0}")]
    Invalid(String),
    #[error("spectrum covers {0}..{1} nm, fit needs {2}..{3} nm")]
    Coverage(f64, f64, f64, f64),
    #[error(transparent)]
    Nv(#[from] NvError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error("fit did not converge ({status})")]
    NotConverged { status: String, last: Box<SpectrumModel> },
    #[error("ZPL labels differ between models: {0}")]
    LabelMismatch(String),
    #[error("non-positive bulk {0} for {1}")]
    NonPositive(&'static str, String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub wavelength_nm: Vec<f64>,
    pub counts: Vec<f64>,
    pub label: String,
    pub tag: String,
}

impl Spectrum {
    pub fn new(wavelength_nm: Vec<f64>, counts: Vec<f64>) -> Result<Self, SpectraError> {
        let s = Self { wavelength_nm, counts, label: String::new(), tag: String::new() };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), SpectraError> {
        if self.wavelength_nm.len() != self.counts.len() || self.counts.len() < 2 {
            return Err(SpectraError::Invalid("need at least two (wavelength, counts) pairs".into()));
        }
        if self.wavelength_nm.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(SpectraError::Invalid("wavelengths must be strictly ascending".into()));
        }
        if self.counts.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(SpectraError::Invalid("counts must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self { counts: self.counts.iter().map(|c| c * k).collect(), ..self.clone() }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), SpectraError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["wavelength_nm", "counts"])?;
        for (l, c) in self.wavelength_nm.iter().zip(&self.counts) {
            w.write_record([format!("{l}"), format!("{c}")])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, SpectraError> {
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
        let (mut wl, mut counts) = (Vec::new(), Vec::new());
        for rec in r.records() {
            let rec = rec?;
            let num = |i: usize| {
                rec.get(i)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| SpectraError::Invalid(format!("bad row {:?}", rec)))
            };
            wl.push(num(0)?);
            counts.push(num(1)?);
        }
        Spectrum::new(wl, counts)
    }
}

/// Uniform wavelength grid. The start doubles as the longpass cut-on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumGrid {
    pub start_nm: f64,
    pub stop_nm: f64,
    pub step_nm: f64,
}

impl Default for SpectrumGrid {
    fn default() -> Self {
        Self { start_nm: 1150.0, stop_nm: 1300.0, step_nm: 0.1 }
    }
}

impl SpectrumGrid {
    pub fn points(&self) -> Vec<f64> {
        let n = ((self.stop_nm - self.start_nm) / self.step_nm + 1e-9).floor() as usize;
        (0..=n).map(|i| self.start_nm + i as f64 * self.step_nm).collect()
    }
}

/// How a basal site's two dipoles are folded into one collection
/// efficiency.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasalCollection {
    /// Incoherent average of the orthogonal pair.
    #[default]
    PairAverage,
    /// The dipole closest to the c-axis alone.
    SteepestDipole,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSettings {
    pub grid: SpectrumGrid,
    pub zpl_fwhm_nm: f64,
    pub sideband_fwhm_nm: f64,
    pub sideband_centers_nm: [f64; 2],
    /// Sideband counts per collected ZPL count, for each sideband.
    pub sideband_ratio: [f64; 2],
    /// Mean counts per bin with nothing emitting.
    pub background_per_bin: f64,
    pub basal: BasalCollection,
    /// Skip Poisson sampling and return expected counts.
    pub noiseless: bool,
}

impl Default for SynthSettings {
    fn default() -> Self {
        Self {
            grid: SpectrumGrid::default(),
            zpl_fwhm_nm: 1.5,
            sideband_fwhm_nm: 25.0,
            sideband_centers_nm: SIDEBAND_CENTERS_NM,
            sideband_ratio: [1.0, 1.0],
            background_per_bin: 5.0,
            basal: BasalCollection::PairAverage,
            noiseless: false,
        }
    }
}

/// Detected ZPL counts per site at unit collection efficiency.
pub type SiteWeights = BTreeMap<SiteLabel, f64>;

pub fn uniform_weights(catalog: &Catalog, counts: f64) -> SiteWeights {
    catalog.sites.iter().map(|s| (s.label, counts)).collect()
}

/// Collection efficiency of each site in one structure (`None` = bulk).
pub fn site_efficiencies(
    curve: &CollectionCurve,
    diameter_nm: Option<f64>,
    catalog: &Catalog,
    basal: BasalCollection,
) -> Result<BTreeMap<SiteLabel, f64>, SpectraError> {
    let p = curve.lookup(diameter_nm)?;
    let mut out = BTreeMap::new();
    for site in &catalog.sites {
        let c = match (site.class, basal) {
            (SiteClass::Axial, _) => mix_point(p, 90.0),
            (SiteClass::Basal, BasalCollection::PairAverage) => site_collection_band(curve, diameter_nm, site)?.pair_avg,
            (SiteClass::Basal, BasalCollection::SteepestDipole) => mix_point(p, crate::nvmodel::min_beta(site)),
        };
        out.insert(site.label, c);
    }
    Ok(out)
}

/// Expected spectrum for given collected ZPL counts per site.
pub fn expected_counts(collected: &BTreeMap<SiteLabel, f64>, catalog: &Catalog, settings: &SynthSettings) -> (Vec<f64>, Vec<f64>) {
    let grid = settings.grid.points();
    let step = settings.grid.step_nm;
    let mut peaks = Vec::new();
    let mut total = 0.0;
    for site in &catalog.sites {
        let n = collected.get(&site.label).copied().unwrap_or(0.0);
        total += n;
        peaks.push(LorentzianPeak::new(n * step, site.zpl_nm, settings.zpl_fwhm_nm));
    }
    for (c, r) in settings.sideband_centers_nm.iter().zip(settings.sideband_ratio) {
        peaks.push(LorentzianPeak::new(r * total * step, *c, settings.sideband_fwhm_nm));
    }
    let mut y = eval_lorentzian_sum(&peaks, &grid);
    y.iter_mut().for_each(|v| *v += settings.background_per_bin);
    (grid, y)
}

/// Samples a spectrum from collected ZPL counts per site.
pub fn synth_from_collected(
    collected: &BTreeMap<SiteLabel, f64>,
    catalog: &Catalog,
    settings: &SynthSettings,
    seed: u64,
) -> Result<Spectrum, SpectraError> {
    if collected.values().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(SpectraError::Invalid("site counts must be non-negative".into()));
    }
    let (grid, mean) = expected_counts(collected, catalog, settings);
    let counts = if settings.noiseless {
        mean
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        mean.iter().map(|&m| if m > 0.0 { Poisson::new(m).map_or(m, |d| d.sample(&mut rng)) } else { 0.0 }).collect()
    };
    Spectrum::new(grid, counts)
}

/// Forward model: intrinsic site weights scaled by each site's collection
/// efficiency in the given structure, plus sidebands, background and shot
/// noise.
pub fn synth_spectrum(
    weights: &SiteWeights,
    curve: &CollectionCurve,
    diameter_nm: Option<f64>,
    catalog: &Catalog,
    settings: &SynthSettings,
    seed: u64,
) -> Result<Spectrum, SpectraError> {
    let eff = site_efficiencies(curve, diameter_nm, catalog, settings.basal)?;
    let collected = catalog.sites.iter().map(|s| (s.label, weights.get(&s.label).copied().unwrap_or(0.0) * eff[&s.label])).collect();
    let mut s = synth_from_collected(&collected, catalog, settings, seed)?;
    s.label = diameter_nm.map_or("bulk".into(), |d| format!("pillar_{d}nm"));
    s.tag = format!("seed={seed}");
    Ok(s)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSevenOptions {
    pub zpl_window_nm: f64,
    pub zpl_fwhm_init_nm: f64,
    pub zpl_fwhm_bounds_nm: (f64, f64),
    pub sideband_centers_nm: [f64; 2],
    pub sideband_window_nm: f64,
    pub sideband_fwhm_init_nm: f64,
    pub sideband_fwhm_bounds_nm: (f64, f64),
    /// Wavelength range the spectrum must cover.
    pub coverage_nm: (f64, f64),
}

impl Default for FitSevenOptions {
    fn default() -> Self {
        Self {
            zpl_window_nm: ZPL_MATCH_NM,
            zpl_fwhm_init_nm: 1.5,
            zpl_fwhm_bounds_nm: (0.1, 8.0),
            sideband_centers_nm: SIDEBAND_CENTERS_NM,
            sideband_window_nm: 30.0,
            sideband_fwhm_init_nm: 25.0,
            sideband_fwhm_bounds_nm: (10.0, 100.0),
            coverage_nm: (1150.0, 1300.0),
        }
    }
}

/// Seven fitted Lorentzians: the catalog ZPLs in catalog order, then the two
/// sidebands. A constant background follows in the parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumModel {
    pub labels: Vec<SiteLabel>,
    pub params: Vec<f64>,
    pub covariance: DMatrix<f64>,
    pub reduced_chi2: f64,
    pub converged: bool,
}

impl SpectrumModel {
    pub fn n_zpl(&self) -> usize {
        self.labels.len()
    }

    pub fn peaks(&self) -> Vec<LorentzianPeak> {
        LorentzianSum { n_peaks: self.n_zpl() + 2, offset: true }.unpack(&self.params)
    }

    pub fn zpl(&self, label: SiteLabel) -> Option<(usize, LorentzianPeak)> {
        let i = self.labels.iter().position(|l| *l == label)?;
        Some((i, self.peaks()[i]))
    }

    pub fn sidebands(&self) -> [LorentzianPeak; 2] {
        let p = self.peaks();
        [p[self.n_zpl()], p[self.n_zpl() + 1]]
    }

    pub fn background(&self) -> f64 {
        self.params[3 * (self.n_zpl() + 2)]
    }

    /// Variance of parameter `k` of ZPL `i` (0 area, 1 center, 2 width).
    pub fn var(&self, i: usize, k: usize) -> f64 {
        self.covariance[(3 * i + k, 3 * i + k)].max(0.0)
    }

    pub fn curve(&self, grid: &[f64]) -> Vec<f64> {
        let b = self.background();
        eval_lorentzian_sum(&self.peaks(), grid).into_iter().map(|v| v + b).collect()
    }
}

fn window_values(s: &Spectrum, lo: f64, hi: f64) -> impl Iterator<Item = f64> + '_ {
    s.wavelength_nm.iter().zip(&s.counts).filter(move |(l, _)| **l >= lo && **l <= hi).map(|(_, c)| *c)
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn initial_guess(s: &Spectrum, sites: &[NvSite], o: &FitSevenOptions) -> Vec<f64> {
    let background = median(window_values(s, o.coverage_nm.0, o.coverage_nm.0 + 10.0).collect()).max(0.0);
    let mut peaks = Vec::new();
    for site in sites {
        let local = window_values(s, site.zpl_nm - 8.0, site.zpl_nm + 8.0).fold(f64::INFINITY, f64::min);
        let top = window_values(s, site.zpl_nm - 0.5, site.zpl_nm + 0.5).fold(0.0, f64::max);
        let h = (top - local).max(1.0);
        peaks.push(LorentzianPeak::new(h * std::f64::consts::PI * o.zpl_fwhm_init_nm / 2.0, site.zpl_nm, o.zpl_fwhm_init_nm));
    }
    for &c in &o.sideband_centers_nm {
        let level = median(window_values(s, c - 5.0, c + 5.0).collect());
        let h = (level - background).max(1.0);
        peaks.push(LorentzianPeak::new(h * std::f64::consts::PI * o.sideband_fwhm_init_nm / 2.0, c, o.sideband_fwhm_init_nm));
    }
    LorentzianSum::pack(&peaks, Some(background))
}

fn run_fit(
    s: &Spectrum,
    sites: &[NvSite],
    o: &FitSevenOptions,
    init: Vec<f64>,
    fixed: &[usize],
) -> Result<FitResult, SpectraError> {
    let model = LorentzianSum { n_peaks: sites.len() + 2, offset: true };
    let (mut lo, mut hi) = (Vec::new(), Vec::new());
    for site in sites {
        lo.extend([0.0, site.zpl_nm - o.zpl_window_nm, o.zpl_fwhm_bounds_nm.0]);
        hi.extend([f64::INFINITY, site.zpl_nm + o.zpl_window_nm, o.zpl_fwhm_bounds_nm.1]);
    }
    for &c in &o.sideband_centers_nm {
        lo.extend([0.0, c - o.sideband_window_nm, o.sideband_fwhm_bounds_nm.0]);
        hi.extend([f64::INFINITY, c + o.sideband_window_nm, o.sideband_fwhm_bounds_nm.1]);
    }
    lo.push(0.0);
    hi.push(f64::INFINITY);
    let init: Vec<f64> = init.iter().zip(lo.iter().zip(&hi)).map(|(v, (l, h))| v.clamp(*l, *h)).collect();
    let mut pr = FitProblem::new(&model, s.wavelength_nm.clone(), s.counts.clone(), init).with_bounds(lo, hi);
    for &i in fixed {
        pr = pr.fix(i);
    }
    Ok(lm_fit(&pr)?)
}

/// Fits the catalog ZPLs and two phonon sidebands.
///
/// ZPL centers start at the catalog wavelengths and may move within the
/// match window; sidebands start at their nominal centers. A ZPL whose area
/// collapses to zero has no defined center or width, so those two are
/// frozen at their seeds and the fit is repeated.
pub fn fit_seven(spectrum: &Spectrum, catalog: &Catalog, options: &FitSevenOptions) -> Result<SpectrumModel, SpectraError> {
    spectrum.validate()?;
    let (first, last) = (spectrum.wavelength_nm[0], *spectrum.wavelength_nm.last().unwrap());
    if first > options.coverage_nm.0 + 1e-9 || last < options.coverage_nm.1 - 1e-9 {
        return Err(SpectraError::Coverage(first, last, options.coverage_nm.0, options.coverage_nm.1));
    }
    let sites = &catalog.sites;
    let init = initial_guess(spectrum, sites, options);
    let mut r = run_fit(spectrum, sites, options, init.clone(), &[])?;
    let dead: Vec<usize> = (0..sites.len()).filter(|&i| r.params[3 * i] <= 1e-9 * (1.0 + init[3 * i])).collect();
    if !dead.is_empty() {
        let mut start = r.params.clone();
        let mut fixed = Vec::new();
        for &i in &dead {
            start[3 * i + 1] = sites[i].zpl_nm;
            start[3 * i + 2] = options.zpl_fwhm_init_nm;
            fixed.extend([3 * i + 1, 3 * i + 2]);
        }
        r = run_fit(spectrum, sites, options, start, &fixed)?;
    }
    let model = SpectrumModel {
        labels: sites.iter().map(|s| s.label).collect(),
        params: r.params,
        covariance: r.covariance,
        reduced_chi2: r.reduced_chi2,
        converged: r.converged,
    };
    if !r.converged {
        return Err(SpectraError::NotConverged { status: format!("{:?}", r.status), last: Box::new(model) });
    }
    Ok(model)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnhancementRow {
    pub diameter_nm: Option<f64>,
    pub label: SiteLabel,
    pub ratio: f64,
    pub ratio_err: f64,
    pub width_ratio: f64,
    pub width_ratio_err: f64,
    pub shift_nm: f64,
    pub shift_err: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnhancementReport {
    pub rows: Vec<EnhancementRow>,
}

/// First-order variance of `g(p, b)` for independent fits with covariances
/// `cp` and `cb`, given the gradients of `g` with respect to both parameter
/// vectors.
fn delta_variance(gp: &[(usize, f64)], cp: &DMatrix<f64>, gb: &[(usize, f64)], cb: &DMatrix<f64>) -> f64 {
    let quad = |g: &[(usize, f64)], c: &DMatrix<f64>| {
        g.iter().flat_map(|&(i, a)| g.iter().map(move |&(j, b)| a * b * c[(i, j)])).sum::<f64>()
    };
    (quad(gp, cp) + quad(gb, cb)).max(0.0)
}

/// Pillar-over-bulk area ratio, width ratio and center shift per ZPL.
pub fn compare(pillar: &SpectrumModel, bulk: &SpectrumModel, diameter_nm: Option<f64>) -> Result<EnhancementReport, SpectraError> {
    let mut a = pillar.labels.clone();
    let mut b = bulk.labels.clone();
    a.sort();
    b.sort();
    if a != b {
        return Err(SpectraError::LabelMismatch(format!("{:?} vs {:?}", pillar.labels, bulk.labels)));
    }
    let mut rows = Vec::new();
    for &label in &bulk.labels {
        let (ip, pp) = pillar.zpl(label).expect("labels checked");
        let (ib, pb) = bulk.zpl(label).expect("labels checked");
        if !(pb.area > 0.0) {
            return Err(SpectraError::NonPositive("area", label.as_str().into()));
        }
        let ratio = pp.area / pb.area;
        let ratio_var = delta_variance(
            &[(3 * ip, 1.0 / pb.area)],
            &pillar.covariance,
            &[(3 * ib, -pp.area / (pb.area * pb.area))],
            &bulk.covariance,
        );
        let width_ratio = pp.fwhm / pb.fwhm;
        let width_var = delta_variance(
            &[(3 * ip + 2, 1.0 / pb.fwhm)],
            &pillar.covariance,
            &[(3 * ib + 2, -pp.fwhm / (pb.fwhm * pb.fwhm))],
            &bulk.covariance,
        );
        let shift_var = delta_variance(&[(3 * ip + 1, 1.0)], &pillar.covariance, &[(3 * ib + 1, -1.0)], &bulk.covariance);
        rows.push(EnhancementRow {
            diameter_nm,
            label,
            ratio,
            ratio_err: ratio_var.sqrt(),
            width_ratio,
            width_ratio_err: width_var.sqrt(),
            shift_nm: pp.center - pb.center,
            shift_err: shift_var.sqrt(),
        });
    }
    Ok(EnhancementReport { rows })
}

pub const REPORT_CSV_HEADER: [&str; 8] =
    ["diameter_nm", "zpl_label", "ratio", "ratio_err", "width_ratio", "width_ratio_err", "shift_nm", "shift_err"];

impl EnhancementReport {
    pub fn row(&self, label: SiteLabel) -> Option<&EnhancementRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), SpectraError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(REPORT_CSV_HEADER)?;
        for r in &self.rows {
            w.write_record([
                r.diameter_nm.map_or("bulk".into(), |d| format!("{d}")),
                r.label.as_str().into(),
                format!("{}", r.ratio),
                format!("{}", r.ratio_err),
                format!("{}", r.width_ratio),
                format!("{}", r.width_ratio_err),
                format!("{}", r.shift_nm),
                format!("{}", r.shift_err),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, SpectraError> {
        let mut r = csv::Reader::from_reader(input);
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let get = |i: usize| rec.get(i).map(str::trim).unwrap_or("");
            let num = |i: usize| get(i).parse::<f64>().map_err(|_| SpectraError::Invalid(format!("bad number {:?}", get(i))));
            rows.push(EnhancementRow {
                diameter_nm: if get(0) == "bulk" { None } else { Some(num(0)?) },
                label: get(1).parse().map_err(|e: String| SpectraError::Invalid(e))?,
                ratio: num(2)?,
                ratio_err: num(3)?,
                width_ratio: num(4)?,
                width_ratio_err: num(5)?,
                shift_nm: num(6)?,
                shift_err: num(7)?,
            });
        }
        Ok(Self { rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nvmodel::CurvePoint;

    fn curve() -> CollectionCurve {
        CollectionCurve::new(Some(CurvePoint { c0: 0.002, c90: 0.031 }), vec![(800.0, CurvePoint { c0: 0.14, c90: 0.36 })]).unwrap()
    }

    fn collected(counts: f64, gains: impl Fn(SiteClass) -> f64) -> BTreeMap<SiteLabel, f64> {
        Catalog::default().sites.iter().map(|s| (s.label, counts * gains(s.class))).collect()
    }

    #[test]
    fn grid_spans_the_longpass_window() {
        let g = SpectrumGrid::default().points();
        assert_eq!(g.len(), 1501);
        assert_eq!(g[0], 1150.0);
        assert!((g[1500] - 1300.0).abs() < 1e-9);
    }

    #[test]
    fn zero_weights_give_background_only() {
        let cat = Catalog::default();
        let s = synth_spectrum(&uniform_weights(&cat, 0.0), &curve(), None, &cat, &SynthSettings::default(), 1).unwrap();
        let mean = s.counts.iter().sum::<f64>() / s.counts.len() as f64;
        assert!((mean - 5.0).abs() < 4.0 * (5.0 / s.counts.len() as f64).sqrt());
    }

    #[test]
    fn bulk_axial_lines_are_taller() {
        let cat = Catalog::default();
        let s = synth_spectrum(&uniform_weights(&cat, 3e6), &curve(), None, &cat, &SynthSettings { noiseless: true, ..Default::default() }, 0)
            .unwrap();
        let at = |l: f64| s.counts[((l - 1150.0) / 0.1).round() as usize];
        assert!(at(1222.0) > at(1242.0));
        assert!(at(1179.0) > at(1176.0));
    }

    #[test]
    fn pillar_gains_favour_basal_lines() {
        let cat = Catalog::default();
        let gain = |l| {
            let e = |d| site_efficiencies(&curve(), d, &cat, BasalCollection::PairAverage).unwrap()[&l];
            e(Some(800.0)) / e(None)
        };
        for basal in [SiteLabel::Kh, SiteLabel::Hk] {
            for axial in [SiteLabel::Hh, SiteLabel::Kk] {
                assert!(gain(basal) > gain(axial));
            }
        }
        // absolute heights keep the axial lines on top with equal intrinsic weights
        let s = synth_spectrum(&uniform_weights(&cat, 3e6), &curve(), Some(800.0), &cat, &SynthSettings { noiseless: true, ..Default::default() }, 0)
            .unwrap();
        let at = |l: f64| s.counts[((l - 1150.0) / 0.1).round() as usize];
        assert!(at(1222.0) > at(1242.0));
    }

    #[test]
    fn spectrum_csv_round_trip() {
        let s = Spectrum::new(vec![1150.0, 1150.1, 1150.2], vec![1.0, 2.5, 0.0]).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"wavelength_nm,counts\n"));
        assert_eq!(Spectrum::read_csv(&buf[..]).unwrap(), s);
        assert!(Spectrum::new(vec![2.0, 1.0], vec![0.0, 0.0]).is_err());
        assert!(Spectrum::new(vec![1.0, 2.0], vec![-1.0, 0.0]).is_err());
    }

    #[test]
    fn closed_loop_recovers_areas_and_centers() {
        let cat = Catalog::default();
        let truth = collected(1e5, |_| 1.0);
        let s = synth_from_collected(&truth, &cat, &SynthSettings::default(), 7).unwrap();
        let m = fit_seven(&s, &cat, &FitSevenOptions::default()).unwrap();
        for site in &cat.sites {
            let (_, p) = m.zpl(site.label).unwrap();
            assert!((p.area / 0.1 / 1e5 - 1.0).abs() < 0.05, "{:?} {}", site.label, p.area);
            assert!((p.center - site.zpl_nm).abs() < 0.2);
        }
        assert!(m.reduced_chi2 < 1.5);
    }

    #[test]
    fn absent_line_fits_to_zero() {
        let cat = Catalog::default();
        let mut truth = collected(1e5, |_| 1.0);
        truth.insert(SiteLabel::Kh, 0.0);
        let s = synth_from_collected(&truth, &cat, &SynthSettings::default(), 3).unwrap();
        let m = fit_seven(&s, &cat, &FitSevenOptions::default()).unwrap();
        let (i, p) = m.zpl(SiteLabel::Kh).unwrap();
        assert!(p.area <= 2.0 * m.var(i, 0).sqrt(), "{} +- {}", p.area, m.var(i, 0).sqrt());
    }

    #[test]
    fn peak_order_does_not_matter() {
        let cat = Catalog::default();
        let s = synth_from_collected(&collected(1e5, |_| 1.0), &cat, &SynthSettings::default(), 5).unwrap();
        let a = fit_seven(&s, &cat, &FitSevenOptions::default()).unwrap();
        let mut rev = cat.clone();
        rev.sites.reverse();
        let b = fit_seven(&s, &rev, &FitSevenOptions::default()).unwrap();
        for site in &cat.sites {
            let (pa, pb) = (a.zpl(site.label).unwrap().1, b.zpl(site.label).unwrap().1);
            assert!((pa.area - pb.area).abs() < 1e-6 * pa.area);
            assert!((pa.center - pb.center).abs() < 1e-6);
            assert!((pa.fwhm - pb.fwhm).abs() < 1e-6 * pa.fwhm);
        }
    }

    #[test]
    fn identical_models_compare_to_unity() {
        let cat = Catalog::default();
        let s = synth_from_collected(&collected(1e5, |_| 1.0), &cat, &SynthSettings::default(), 9).unwrap();
        let m = fit_seven(&s, &cat, &FitSevenOptions::default()).unwrap();
        let r = compare(&m, &m, Some(800.0)).unwrap();
        for row in &r.rows {
            assert_eq!(row.ratio, 1.0);
            assert_eq!(row.width_ratio, 1.0);
            assert_eq!(row.shift_nm, 0.0);
            assert!(row.ratio_err > 0.0);
        }
        let mut other = m.clone();
        other.labels[0] = SiteLabel::Hh;
        assert!(matches!(compare(&other, &m, None), Err(SpectraError::LabelMismatch(_))));
    }

    #[test]
    fn injected_gains_are_recovered() {
        let cat = Catalog::default();
        let bulk = synth_from_collected(&collected(2e4, |_| 1.0), &cat, &SynthSettings::default(), 21).unwrap();
        let gains = |c| if c == SiteClass::Basal { 10.0 } else { 2.0 };
        let pillar = synth_from_collected(&collected(2e4, gains), &cat, &SynthSettings::default(), 22).unwrap();
        let o = FitSevenOptions::default();
        let r = compare(&fit_seven(&pillar, &cat, &o).unwrap(), &fit_seven(&bulk, &cat, &o).unwrap(), Some(800.0)).unwrap();
        for site in &cat.sites {
            let row = r.row(site.label).unwrap();
            let g = gains(site.class);
            assert!((row.ratio - g).abs() < 2.0 * row.ratio_err, "{:?} {} +- {}", site.label, row.ratio, row.ratio_err);
            assert!((row.width_ratio - 1.0).abs() < 0.05);
        }
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("diameter_nm,zpl_label,ratio,ratio_err,width_ratio,width_ratio_err,shift_nm,shift_err\n"));
        assert_eq!(text.lines().count(), 6);
        assert_eq!(EnhancementReport::read_csv(text.as_bytes()).unwrap(), r);
    }

    #[test]
    fn scaling_both_spectra_keeps_ratios() {
        let cat = Catalog::default();
        let settings = SynthSettings { noiseless: true, ..Default::default() };
        let bulk = synth_from_collected(&collected(2e4, |_| 1.0), &cat, &settings, 0).unwrap();
        let pillar = synth_from_collected(&collected(2e4, |c| if c == SiteClass::Basal { 10.0 } else { 2.0 }), &cat, &settings, 0).unwrap();
        let o = FitSevenOptions::default();
        let base = compare(&fit_seven(&pillar, &cat, &o).unwrap(), &fit_seven(&bulk, &cat, &o).unwrap(), None).unwrap();
        for k in [1.7, 4.0, 13.0] {
            let r = compare(&fit_seven(&pillar.scaled(k), &cat, &o).unwrap(), &fit_seven(&bulk.scaled(k), &cat, &o).unwrap(), None).unwrap();
            for (a, b) in base.rows.iter().zip(&r.rows) {
                assert!((a.ratio - b.ratio).abs() < 1e-6 * a.ratio);
                assert!((a.width_ratio - b.width_ratio).abs() < 1e-6);
                assert!((a.shift_nm - b.shift_nm).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn shift_errors_shrink_with_counts() {
        let cat = Catalog::default();
        let o = FitSevenOptions::default();
        let err = |n: f64| {
            let mut e = Vec::new();
            for seed in 0..4 {
                let settings = SynthSettings { background_per_bin: 5.0 * n / 1e4, ..Default::default() };
                let a = synth_from_collected(&collected(n, |_| 1.0), &cat, &settings, 100 + seed).unwrap();
                let b = synth_from_collected(&collected(n, |_| 1.0), &cat, &settings, 200 + seed).unwrap();
                let r = compare(&fit_seven(&a, &cat, &o).unwrap(), &fit_seven(&b, &cat, &o).unwrap(), None).unwrap();
                e.push(r.row(SiteLabel::Kk).unwrap().shift_err);
            }
            e.iter().sum::<f64>() / e.len() as f64
        };
        let (e1, e2, e3) = (err(1e4), err(1e5), err(1e6));
        for r in [e1 / e2, e2 / e3] {
            assert!((r / 10f64.sqrt() - 1.0).abs() < 0.2, "{e1} {e2} {e3}");
        }
    }

    #[test]
    fn site_efficiency_models() {
        let cat = Catalog::default();
        let pair = site_efficiencies(&curve(), None, &cat, BasalCollection::PairAverage).unwrap();
        let steep = site_efficiencies(&curve(), None, &cat, BasalCollection::SteepestDipole).unwrap();
        assert_eq!(pair[&SiteLabel::Kk], 0.031);
        assert!(steep[&SiteLabel::Hk] < pair[&SiteLabel::Hk]);
        assert!(site_efficiencies(&curve(), Some(500.0), &cat, BasalCollection::PairAverage).is_err());
    }
}
