//! `fig6` and `fit-lifetime`.

use std::path::Path;

use nvsic::fitkit::LorentzianPeak;
use nvsic::spectra::site_efficiencies;
use nvsic::tcspc::{filter_mix, fit_lifetime, simulate_stream, BandpassFilter, DecayHistogram, LifetimeFit};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{finish, write_rows, Failure};
use crate::{plot, reference, write_with, CliError, Context};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LifetimeRow {
    pub diameter_nm: f64,
    pub filter: String,
    pub tau_ns: f64,
    pub tau_err: f64,
    pub amplitude: f64,
    pub backscatter_amplitude: f64,
    pub tau2_ns: f64,
    pub baseline: f64,
    pub reduced_chi2: f64,
    pub counts: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpreadRow {
    pub filter: String,
    pub mean_tau_ns: f64,
    pub spread_ns: f64,
    pub limit_ns: f64,
    pub pass: bool,
}

fn row(diameter_nm: f64, filter: &str, fit: &LifetimeFit, counts: u64) -> LifetimeRow {
    LifetimeRow {
        diameter_nm,
        filter: filter.into(),
        tau_ns: fit.model.tau1,
        tau_err: fit.errors.tau1,
        amplitude: fit.model.a1,
        backscatter_amplitude: fit.model.a2,
        tau2_ns: fit.model.tau2,
        baseline: fit.model.baseline,
        reduced_chi2: fit.reduced_chi2,
        counts,
    }
}

pub fn fig6(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let f6 = &cfg.fig6;
    let bad = |e: &dyn std::fmt::Display| CliError::Config(e.to_string());
    cfg.detector.validate().map_err(|e| bad(&e))?;
    cfg.acquisition.validate().map_err(|e| bad(&e))?;
    if !(f6.detected_photons >= 0.0 && f6.filter_width_nm > 0.0) {
        return Err(CliError::Config("fig6 photon count and filter width must be positive".into()));
    }
    let acq = if f6.detected_photons > 0.0 {
        cfg.acquisition.for_detected(f6.detected_photons, cfg.detector.efficiency)
    } else {
        cfg.acquisition
    };
    acq.validate().map_err(|e| bad(&e))?;
    let catalog = cfg.catalog()?;
    let curve = reference::curve(cfg)?;
    let mut jobs = Vec::new();
    for &d in &f6.diameters_nm {
        for &f in &f6.filters {
            let site = catalog.site(f).ok_or_else(|| CliError::Config(format!("filter line {} not in catalog", f.as_str())))?;
            jobs.push((d, f, site.zpl_nm));
        }
    }
    let dir = ctx.dir("fig6")?;
    let backscatter = f6.backscatter.then_some(f6.backscatter_settings);
    let results: Vec<Result<(LifetimeRow, DecayHistogram), Failure>> = jobs
        .par_iter()
        .enumerate()
        .map(|(k, &(d, f, zpl))| {
            let item = format!("{} nm {}", d, f.as_str());
            let fail = |e: &dyn std::fmt::Display| Failure { item: item.clone(), error: e.to_string() };
            let eff = site_efficiencies(&curve, Some(d), &catalog, cfg.spectrum.basal).map_err(|e| fail(&e))?;
            let peaks: Vec<_> = catalog
                .sites
                .iter()
                .map(|s| {
                    let w = cfg.fig4.weights.get(&s.label).copied().unwrap_or(cfg.fig4.counts_per_zpl);
                    (s.label, LorentzianPeak::new(w * eff[&s.label], s.zpl_nm, cfg.spectrum.zpl_fwhm_nm))
                })
                .collect();
            let filter = BandpassFilter::around(zpl, f6.filter_width_nm);
            let mix = filter_mix(&peaks, &filter, &catalog, backscatter).map_err(|e| fail(&e))?;
            let seed = cfg.seed.wrapping_mul(1_000_003).wrapping_add(k as u64);
            let hist = simulate_stream(&mix, &cfg.detector, &acq, seed).map_err(|e| fail(&e))?;
            let fit = fit_lifetime(&hist, &f6.fit).map_err(|e| fail(&e))?;
            Ok((row(d, f.as_str(), &fit, hist.total()), hist))
        })
        .collect();

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok((row, hist)) => {
                write_with(&dir.join(format!("decay_{}_{}.csv", row.filter, row.diameter_nm)), |w| hist.write_csv(w))?;
                println!("{} nm {}: tau {:.3} +- {:.3} ns", row.diameter_nm, row.filter, row.tau_ns, row.tau_err);
                rows.push(row);
            }
            Err(f) => failures.push(f),
        }
    }
    write_rows(&dir.join("lifetimes.csv"), &rows)?;

    let mut spreads = Vec::new();
    let mut series = Vec::new();
    for f in &f6.filters {
        let taus: Vec<(f64, f64)> = rows.iter().filter(|r| r.filter == f.as_str()).map(|r| (r.diameter_nm, r.tau_ns)).collect();
        if taus.is_empty() {
            continue;
        }
        let lo = taus.iter().map(|t| t.1).fold(f64::INFINITY, f64::min);
        let hi = taus.iter().map(|t| t.1).fold(f64::NEG_INFINITY, f64::max);
        let s = SpreadRow {
            filter: f.as_str().into(),
            mean_tau_ns: taus.iter().map(|t| t.1).sum::<f64>() / taus.len() as f64,
            spread_ns: hi - lo,
            limit_ns: f6.max_spread_ns,
            pass: hi - lo < f6.max_spread_ns,
        };
        println!("{}: mean tau {:.3} ns, spread {:.3} ns across diameters", s.filter, s.mean_tau_ns, s.spread_ns);
        if !s.pass {
            failures.push(Failure { item: format!("{} spread", s.filter), error: format!("{:.3} ns exceeds {} ns", s.spread_ns, s.limit_ns) });
        }
        spreads.push(s);
        series.push(taus);
    }
    write_rows(&dir.join("spread.csv"), &spreads)?;
    if !series.is_empty() {
        plot::line_plot(&dir.join("lifetimes.png"), &series, false)?;
    }
    finish(&dir, &failures)
}

pub fn fit(ctx: &Context, input: &Path) -> Result<(), CliError> {
    let hist = DecayHistogram::read_csv(crate::open(input)?).map_err(|e| CliError::Input(format!("{}: {e}", input.display())))?;
    let stem = input.file_stem().map_or("decay".into(), |s| s.to_string_lossy().into_owned());
    let dir = ctx.dir("fit")?;
    match fit_lifetime(&hist, &ctx.config.fig6.fit) {
        Ok(fit) => {
            let path = dir.join(format!("{stem}_lifetime.csv"));
            write_rows(&path, &[row(f64::NAN, &stem, &fit, hist.total())])?;
            let data: Vec<(f64, f64)> = hist.times_ns().into_iter().zip(hist.counts.iter().map(|&c| c as f64)).filter(|p| p.1 > 0.0).collect();
            plot::line_plot(&path.with_extension("png"), &[data], true)?;
            println!("tau {:.4} +- {:.4} ns; wrote {}", fit.model.tau1, fit.errors.tau1, path.display());
            Ok(())
        }
        Err(e) => finish(&dir, &[Failure { item: stem, error: e.to_string() }]),
    }
}
