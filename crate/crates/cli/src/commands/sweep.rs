//! `collection-sweep`: FDTD runs for bulk and each pillar diameter.

use nvsic::collection::simulate_collection;
use nvsic::farfield::{write_enhancement_csv, DipoleAxis, EnhancementPoint};
use nvsic::geometry::{diameter_sweep, StructureKind, StructureSpec};
use nvsic::nvmodel::{site_collection_band, CollectionCurve, CurvePoint};
use serde::{Deserialize, Serialize};

use super::{finish, write_rows, Failure};
use crate::cache::{run_hash, RunCache, RunRecord};
use crate::{plot, write_with, CliError, Context};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub structure: String,
    pub diameter_nm: f64,
    pub orientation: String,
    pub efficiency: f64,
    pub plane_efficiency: f64,
    pub steps: u64,
    pub decayed_fraction: f64,
    pub cached: bool,
    pub warning: String,
    pub hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandRow {
    pub structure: String,
    pub label: String,
    pub class: String,
    pub min: f64,
    pub max: f64,
    pub pair_avg: f64,
}

fn diameter(s: &StructureSpec) -> f64 {
    if s.kind == StructureKind::Pillar {
        s.pillar_diameter_nm
    } else {
        0.0
    }
}

pub fn run(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let structures = cfg.sweep.structures();
    if structures.is_empty() {
        return Err(CliError::Config("sweep has no structures".into()));
    }
    let max_d = 2.0 * cfg.collection.sizing.lateral_half_width_nm;
    if !cfg.sweep.diameters_nm.is_empty() {
        diameter_sweep(&StructureSpec::pillar(1.0), &cfg.sweep.diameters_nm, max_d).map_err(|e| CliError::Config(e.to_string()))?;
    }
    for s in &structures {
        s.validate().map_err(|e| CliError::Config(e.to_string()))?;
        cfg.collection.objective.validate(s.ambient_index).map_err(|e| CliError::Config(e.to_string()))?;
    }
    let dir = ctx.dir("collection")?;
    let cache = RunCache::new(&ctx.out.join("cache"));
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut results: Vec<(StructureSpec, DipoleAxis, f64)> = Vec::new();

    for s in &structures {
        for o in [DipoleAxis::Horizontal, DipoleAxis::Vertical] {
            let item = format!("{} {}", s.label(), o.as_str());
            let hash = run_hash(s, o, &cfg.collection);
            let hit = if ctx.resume { cache.get(&hash) } else { None };
            let cached = hit.is_some();
            let record = match hit {
                Some(r) => r,
                None => match simulate_collection(s, o, &cfg.collection) {
                    Ok(run) => {
                        let r = RunRecord {
                            efficiency: run.result.efficiency,
                            collected_power: run.result.collected_power,
                            total_emitted_power: run.result.total_emitted_power,
                            plane_efficiency: run.plane_efficiency,
                            steps: run.steps,
                            decayed_fraction: run.decayed_fraction,
                            warning: run.warning.map(|w| format!("{w:?}")),
                        };
                        if r.warning.is_none() {
                            cache.put(&hash, &r).map_err(|e| CliError::Io { path: ctx.out.join("cache"), source: e })?;
                        }
                        r
                    }
                    Err(e) => {
                        failures.push(Failure { item, error: e.to_string() });
                        continue;
                    }
                },
            };
            println!("{item}: efficiency {:.5} ({} steps{})", record.efficiency, record.steps, if cached { ", cached" } else { "" });
            if let Some(w) = &record.warning {
                failures.push(Failure { item: item.clone(), error: format!("{w}: residual energy fraction {:.2e}", record.decayed_fraction) });
            }
            results.push((*s, o, record.efficiency));
            rows.push(RunRow {
                structure: s.label(),
                diameter_nm: diameter(s),
                orientation: o.as_str().into(),
                efficiency: record.efficiency,
                plane_efficiency: record.plane_efficiency,
                steps: record.steps,
                decayed_fraction: record.decayed_fraction,
                cached,
                warning: record.warning.clone().unwrap_or_default(),
                hash,
            });
        }
    }
    write_rows(&dir.join("runs.csv"), &rows)?;

    let eff = |kind: StructureKind, d: f64, o: DipoleAxis| {
        results.iter().find(|(s, oo, _)| s.kind == kind && *oo == o && (kind != StructureKind::Pillar || s.pillar_diameter_nm == d)).map(|r| r.2)
    };
    let mut points = Vec::new();
    let mut series = Vec::new();
    for o in [DipoleAxis::Horizontal, DipoleAxis::Vertical] {
        let bulk = eff(StructureKind::Bulk, 0.0, o);
        if let Some(b) = bulk {
            points.push(EnhancementPoint { diameter_nm: 0.0, orientation: o, efficiency: b, enhancement: 1.0 });
        }
        let mut line = Vec::new();
        for &d in &cfg.sweep.diameters_nm {
            if let Some(e) = eff(StructureKind::Pillar, d, o) {
                let enh = match bulk {
                    Some(b) if b > 0.0 => e / b,
                    _ => f64::NAN,
                };
                points.push(EnhancementPoint { diameter_nm: d, orientation: o, efficiency: e, enhancement: enh });
                line.push((d, enh));
            }
        }
        series.push(line);
    }
    let path = dir.join("efficiency.csv");
    write_with(&path, |w| write_enhancement_csv(w, &points))?;
    if series.iter().any(|s| s.iter().any(|p| p.1.is_finite())) {
        plot::line_plot(&dir.join("enhancement.png"), &series, false)?;
    }

    // orientation-mixed table, needs both orientations everywhere
    let point = |kind, d| Some(CurvePoint { c0: eff(kind, d, DipoleAxis::Vertical)?, c90: eff(kind, d, DipoleAxis::Horizontal)? });
    let bulk = point(StructureKind::Bulk, 0.0);
    let pillar_points: Vec<(f64, CurvePoint)> =
        cfg.sweep.diameters_nm.iter().filter_map(|&d| point(StructureKind::Pillar, d).map(|p| (d, p))).collect();
    if let Ok(curve) = CollectionCurve::new(bulk, pillar_points) {
        write_with(&dir.join("curve.csv"), |w| curve.write_csv(w))?;
        let catalog = cfg.catalog()?;
        let mut band = Vec::new();
        let structures = curve.bulk.map(|_| None).into_iter().chain(curve.diameters().into_iter().map(Some));
        for d in structures {
            for site in &catalog.sites {
                let b = site_collection_band(&curve, d, site).map_err(|e| CliError::Input(e.to_string()))?;
                band.push(BandRow {
                    structure: d.map_or("bulk".into(), |d| format!("{d}")),
                    label: site.label.as_str().into(),
                    class: site.class.as_str().into(),
                    min: b.min,
                    max: b.max,
                    pair_avg: b.pair_avg,
                });
            }
        }
        write_rows(&dir.join("band.csv"), &band)?;
    }
    finish(&dir, &failures)
}
