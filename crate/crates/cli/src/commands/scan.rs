//! `scan`: confocal PL image of a pillar array beside bulk.

use nvsic::scansim::{render_scan, ClassStats, Region, RegionEfficiencies, SceneMap};
use serde::{Deserialize, Serialize};

use super::write_rows;
use crate::{plot, reference, write_with, CliError, Context};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionRow {
    pub region: String,
    pub pixels: usize,
    pub mean_counts: f64,
    pub mean_emitter_area_um2: f64,
    pub efficiency: f64,
}

pub fn run(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let s = &cfg.scan;
    let bad = |e: &dyn std::fmt::Display| CliError::Config(e.to_string());
    cfg.detector.validate().map_err(|e| bad(&e))?;
    let mut scene = SceneMap::pillar_field(s.width_um, s.height_um, s.cell_um, s.pitch_um, s.diameter_nm, s.bulk_from_um).map_err(|e| bad(&e))?;
    scene.density = s.density_per_um2;
    let curve = reference::curve(cfg)?;
    let eff = RegionEfficiencies::from_curve(&curve, &scene.diameters(), &cfg.catalog()?, cfg.spectrum.basal).map_err(|e| bad(&e))?;
    let img = render_scan(&scene, &s.beam, &eff, s.dwell_ms, &cfg.detector, cfg.seed).map_err(|e| bad(&e))?;

    let dir = ctx.dir("scan")?;
    write_with(&dir.join("scan.csv"), |w| img.write_csv(w))?;
    plot::write_gray(&dir.join("scan.png"), img.nx, img.ny, &img.to_gray8())?;

    let sum = img.summary();
    let pillar = Region::Pillar { diameter_nm: s.diameter_nm };
    let region = |name: &str, c: ClassStats, r: Region| RegionRow {
        region: name.into(),
        pixels: c.pixels,
        mean_counts: c.mean_counts,
        mean_emitter_area_um2: c.mean_emitter_area,
        efficiency: eff.of(r),
    };
    write_rows(
        &dir.join("regions.csv"),
        &[region("pillar", sum.pillar, pillar), region("bulk", sum.bulk, Region::Bulk), region("etched", sum.etched, Region::Etched)],
    )?;
    let injected = eff.of(pillar) / eff.bulk;
    println!(
        "mean counts: pillar {:.1}, bulk {:.1}, etched {:.1}",
        sum.pillar.mean_counts, sum.bulk.mean_counts, sum.etched.mean_counts
    );
    println!("per-emitter pillar/bulk {:.3} +- {:.3} (configured {injected:.3})", sum.normalized_ratio, sum.normalized_ratio_err);
    Ok(())
}
