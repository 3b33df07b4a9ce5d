//! `fig4`, `fig5`, `synth-spectrum` and `fit-spectrum`.

use std::path::{Path, PathBuf};

use nvsic::nvmodel::{Catalog, SiteClass};
use nvsic::spectra::{compare, fit_seven, synth_spectrum, uniform_weights, EnhancementReport, SiteWeights, Spectrum, SpectrumModel};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{finish, write_rows, Failure};
use crate::{plot, reference, write_with, CliError, Context};

/// One fitted peak, or the flat background (`peak = background`, value in
/// `area`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeakRow {
    pub spectrum: String,
    pub peak: String,
    pub area: f64,
    pub area_err: f64,
    pub center_nm: f64,
    pub center_err: f64,
    pub fwhm_nm: f64,
    pub fwhm_err: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WidthRow {
    pub diameter_nm: f64,
    pub zpl_label: String,
    pub width_ratio: f64,
    pub width_ratio_err: f64,
    pub shift_nm: f64,
    pub shift_err: f64,
}

pub fn peak_rows(name: &str, m: &SpectrumModel) -> Vec<PeakRow> {
    let mut names: Vec<String> = m.labels.iter().map(|l| l.as_str().to_string()).collect();
    names.extend(["sideband_1".into(), "sideband_2".into()]);
    let sd = |k: usize| m.covariance[(k, k)].max(0.0).sqrt();
    let mut rows: Vec<PeakRow> = m
        .peaks()
        .iter()
        .zip(names)
        .enumerate()
        .map(|(i, (p, n))| PeakRow {
            spectrum: name.into(),
            peak: n,
            area: p.area,
            area_err: sd(3 * i),
            center_nm: p.center,
            center_err: sd(3 * i + 1),
            fwhm_nm: p.fwhm,
            fwhm_err: sd(3 * i + 2),
        })
        .collect();
    let k = m.params.len() - 1;
    rows.push(PeakRow {
        spectrum: name.into(),
        peak: "background".into(),
        area: m.background(),
        area_err: sd(k),
        center_nm: f64::NAN,
        center_err: f64::NAN,
        fwhm_nm: f64::NAN,
        fwhm_err: f64::NAN,
    });
    rows
}

fn weights(ctx: &Context, catalog: &Catalog) -> SiteWeights {
    let mut w = uniform_weights(catalog, ctx.config.fig4.counts_per_zpl);
    for (l, v) in &ctx.config.fig4.weights {
        w.insert(*l, *v);
    }
    w
}

fn read_spectrum(path: &Path) -> Result<Spectrum, CliError> {
    Spectrum::read_csv(crate::open(path)?).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn spectrum_name(d: Option<f64>) -> String {
    d.map_or("bulk".into(), |d| format!("pillar_{d}"))
}

/// Seed for structure `k` of a run (bulk is 0).
fn structure_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(k as u64)
}

struct Fits {
    report: EnhancementReport,
    peaks: Vec<PeakRow>,
    failures: Vec<Failure>,
}

/// Loads or synthesizes bulk and pillar spectra, fits them all and
/// compares each pillar with bulk.
fn fit_all(ctx: &Context, dir: &Path) -> Result<Fits, CliError> {
    let cfg = &ctx.config;
    let catalog = cfg.catalog()?;
    let diameters = &cfg.fig4.diameters_nm;
    let mut inputs: Vec<(Option<f64>, Result<Spectrum, CliError>)> = Vec::new();
    match &cfg.fig4.spectra_dir {
        Some(src) => {
            let bulk = src.join("bulk.csv");
            if !bulk.exists() {
                return Err(CliError::Input(format!("missing bulk reference {}", bulk.display())));
            }
            inputs.push((None, read_spectrum(&bulk)));
            for &d in diameters {
                inputs.push((Some(d), read_spectrum(&src.join(format!("{}.csv", spectrum_name(Some(d)))))));
            }
        }
        None => {
            let curve = reference::curve(cfg)?;
            let w = weights(ctx, &catalog);
            let sdir = dir.join("spectra");
            std::fs::create_dir_all(&sdir).map_err(|e| CliError::Io { path: sdir.clone(), source: e })?;
            for (k, d) in std::iter::once(None).chain(diameters.iter().map(|&d| Some(d))).enumerate() {
                let s = synth_spectrum(&w, &curve, d, &catalog, &cfg.spectrum, structure_seed(cfg.seed, k))
                    .map_err(|e| CliError::Config(e.to_string()))?;
                write_with(&sdir.join(format!("{}.csv", spectrum_name(d))), |f| s.write_csv(f))?;
                inputs.push((d, Ok(s)));
            }
        }
    }

    let fitted: Vec<(Option<f64>, Result<SpectrumModel, String>)> = inputs
        .into_par_iter()
        .map(|(d, s)| (d, s.map_err(|e| e.to_string()).and_then(|s| fit_seven(&s, &catalog, &cfg.fit).map_err(|e| e.to_string()))))
        .collect();

    let mut failures = Vec::new();
    let mut peaks = Vec::new();
    for (d, m) in &fitted {
        match m {
            Ok(m) => peaks.extend(peak_rows(&spectrum_name(*d), m)),
            Err(e) => failures.push(Failure { item: spectrum_name(*d), error: e.clone() }),
        }
    }
    let mut report = EnhancementReport::default();
    if let (None, Ok(bulk)) = &fitted[0] {
        for (d, m) in &fitted[1..] {
            if let Ok(m) = m {
                match compare(m, bulk, *d) {
                    Ok(r) => report.rows.extend(r.rows),
                    Err(e) => failures.push(Failure { item: spectrum_name(*d), error: e.to_string() }),
                }
            }
        }
    }
    write_rows(&dir.join("fits.csv"), &peaks)?;
    Ok(Fits { report, peaks, failures })
}

fn by_label<T>(catalog: &Catalog, report: &EnhancementReport, f: impl Fn(&nvsic::spectra::EnhancementRow) -> T) -> Vec<Vec<(f64, T)>> {
    catalog
        .sites
        .iter()
        .map(|s| report.rows.iter().filter(|r| r.label == s.label).map(|r| (r.diameter_nm.unwrap_or(0.0), f(r))).collect())
        .collect()
}

pub fn fig4(ctx: &Context) -> Result<(), CliError> {
    let dir = ctx.dir("fig4")?;
    let fits = fit_all(ctx, &dir)?;
    write_with(&dir.join("enhancement.csv"), |w| fits.report.write_csv(w))?;
    let catalog = ctx.config.catalog()?;
    if !fits.report.rows.is_empty() {
        plot::line_plot(&dir.join("enhancement.png"), &by_label(&catalog, &fits.report, |r| r.ratio), false)?;
    }
    // basal lines against axial lines, per diameter
    let class = |l| catalog.site(l).map(|s| s.class);
    let mut ds: Vec<f64> = fits.report.rows.iter().filter_map(|r| r.diameter_nm).collect();
    ds.dedup();
    for d in ds {
        let rows = fits.report.rows.iter().filter(|r| r.diameter_nm == Some(d));
        let (mut basal, mut axial) = (f64::INFINITY, f64::NEG_INFINITY);
        for r in rows {
            match class(r.label) {
                Some(SiteClass::Basal) => basal = basal.min(r.ratio),
                Some(SiteClass::Axial) => axial = axial.max(r.ratio),
                None => {}
            }
        }
        let verdict = if basal > axial { "basal above axial" } else { "basal not above axial" };
        println!("{d} nm: lowest basal ratio {basal:.3}, highest axial ratio {axial:.3}: {verdict}");
    }
    println!("{} peaks fitted, {} ratios", fits.peaks.len(), fits.report.rows.len());
    finish(&dir, &fits.failures)
}

pub fn fig5(ctx: &Context) -> Result<(), CliError> {
    let dir = ctx.dir("fig5")?;
    let fits = fit_all(ctx, &dir)?;
    let rows: Vec<WidthRow> = fits
        .report
        .rows
        .iter()
        .map(|r| WidthRow {
            diameter_nm: r.diameter_nm.unwrap_or(0.0),
            zpl_label: r.label.as_str().into(),
            width_ratio: r.width_ratio,
            width_ratio_err: r.width_ratio_err,
            shift_nm: r.shift_nm,
            shift_err: r.shift_err,
        })
        .collect();
    write_rows(&dir.join("widths.csv"), &rows)?;
    if !rows.is_empty() {
        let catalog = ctx.config.catalog()?;
        plot::line_plot(&dir.join("width_ratio.png"), &by_label(&catalog, &fits.report, |r| r.width_ratio), false)?;
    }
    finish(&dir, &fits.failures)
}

pub fn synth(ctx: &Context, diameter: Option<f64>) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let catalog = cfg.catalog()?;
    let curve = reference::curve(cfg)?;
    let s = synth_spectrum(&weights(ctx, &catalog), &curve, diameter, &catalog, &cfg.spectrum, cfg.seed)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let path = ctx.dir("spectra")?.join(format!("{}.csv", spectrum_name(diameter)));
    write_with(&path, |w| s.write_csv(w))?;
    plot::line_plot(&path.with_extension("png"), &[s.wavelength_nm.iter().copied().zip(s.counts.iter().copied()).collect()], false)?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn fit(ctx: &Context, input: &Path) -> Result<(), CliError> {
    let s = read_spectrum(input)?;
    let catalog = ctx.config.catalog()?;
    let stem = input.file_stem().map_or("spectrum".into(), |s| s.to_string_lossy().into_owned());
    let dir = ctx.dir("fit")?;
    let path: PathBuf = dir.join(format!("{stem}_fit.csv"));
    match fit_seven(&s, &catalog, &ctx.config.fit) {
        Ok(m) => {
            write_rows(&path, &peak_rows(&stem, &m))?;
            let model: Vec<(f64, f64)> = s.wavelength_nm.iter().copied().zip(m.curve(&s.wavelength_nm)).collect();
            let data = s.wavelength_nm.iter().copied().zip(s.counts.iter().copied()).collect();
            plot::line_plot(&path.with_extension("png"), &[data, model], false)?;
            println!("reduced chi2 {:.3}; wrote {}", m.reduced_chi2, path.display());
            Ok(())
        }
        Err(e) => finish(&dir, &[Failure { item: stem, error: e.to_string() }]),
    }
}
