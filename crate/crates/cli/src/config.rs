//! Run configuration: a TOML file with one section per workflow.
//!
//! Every section and key is optional; anything left out takes the library
//! default. Unknown keys are errors. Relative paths inside the file resolve
//! against the directory holding it.
//!
//! ```toml
//! seed = 7
//! out_dir = "out"
//!
//! [collection.sizing]
//! cell_size_nm = 25.0
//!
//! [collection.objective]
//! numerical_aperture = 0.85
//!
//! [sweep]
//! diameters_nm = [300, 400, 500, 600, 700, 800, 900, 1000, 1100]
//!
//! [curve]
//! path = "collection/curve.csv"   # omit for the built-in reference curve
//!
//! [fig4]
//! diameters_nm = [600, 800]
//! counts_per_zpl = 20000
//!
//! [fig6]
//! detected_photons = 1e6
//!
//! [scan]
//! diameter_nm = 600
//! dwell_ms = 10
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nvsic::collection::CollectionSettings;
use nvsic::geometry::{default_diameters, StructureSpec, DEFAULT_PILLAR_HEIGHT_NM, SIC_INDEX};
use nvsic::nvmodel::{Catalog, SiteClass, SiteLabel};
use nvsic::scansim::{BeamSpec, DEFAULT_DENSITY};
use nvsic::spectra::{FitSevenOptions, SynthSettings};
use nvsic::tcspc::{Acquisition, BackscatterSettings, DetectorModel, LifetimeOptions};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub collection: CollectionSettings,
    pub sweep: SweepConfig,
    pub curve: CurveConfig,
    pub catalog: CatalogConfig,
    /// Spectrum synthesis (grid, line shapes, background, noise).
    pub spectrum: SynthSettings,
    pub fit: FitSevenOptions,
    pub fig4: Fig4Config,
    pub detector: DetectorModel,
    pub acquisition: Acquisition,
    pub fig6: Fig6Config,
    pub scan: ScanConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            out_dir: PathBuf::from("out"),
            collection: CollectionSettings::default(),
            sweep: SweepConfig::default(),
            curve: CurveConfig::default(),
            catalog: CatalogConfig::default(),
            spectrum: SynthSettings::default(),
            fit: FitSevenOptions::default(),
            fig4: Fig4Config::default(),
            detector: DetectorModel::default(),
            acquisition: Acquisition::default(),
            fig6: Fig6Config::default(),
            scan: ScanConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub diameters_nm: Vec<f64>,
    pub include_bulk: bool,
    pub pillar_height_nm: f64,
    pub substrate_index: f64,
    /// Emitter depth below the top surface; unset uses the structure
    /// defaults (500 nm in bulk, mid-height in a pillar).
    pub emitter_depth_nm: Option<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            diameters_nm: default_diameters(),
            include_bulk: true,
            pillar_height_nm: DEFAULT_PILLAR_HEIGHT_NM,
            substrate_index: SIC_INDEX,
            emitter_depth_nm: None,
        }
    }
}

impl SweepConfig {
    pub fn structures(&self) -> Vec<StructureSpec> {
        let tweak = |mut s: StructureSpec| {
            s.pillar_height_nm = self.pillar_height_nm;
            s.substrate_index = self.substrate_index;
            s.emitter_depth_nm = self.emitter_depth_nm;
            s
        };
        let mut out = Vec::new();
        if self.include_bulk {
            out.push(tweak(StructureSpec::bulk()));
        }
        out.extend(self.diameters_nm.iter().map(|&d| tweak(StructureSpec::pillar(d))));
        out
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurveConfig {
    /// Collection curve CSV as written by `collection-sweep`.
    pub path: Option<PathBuf>,
    pub interpolate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CatalogConfig {
    pub path: Option<PathBuf>,
    /// Class assigned to the unassigned 1173 nm line.
    pub line1173_class: SiteClass,
}

impl Default for CatalogConfig {
    fn default() -> Self {
        Self { path: None, line1173_class: SiteClass::Basal }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Fig4Config {
    pub diameters_nm: Vec<f64>,
    /// Intrinsic ZPL counts per site before collection.
    pub counts_per_zpl: f64,
    /// Per-site overrides of `counts_per_zpl`.
    pub weights: BTreeMap<SiteLabel, f64>,
    /// Directory of measured spectra (`bulk.csv`, `pillar_<d>.csv`) used
    /// instead of synthetic ones.
    pub spectra_dir: Option<PathBuf>,
}

impl Default for Fig4Config {
    fn default() -> Self {
        Self { diameters_nm: default_diameters(), counts_per_zpl: 1e6, weights: BTreeMap::new(), spectra_dir: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Fig6Config {
    pub diameters_nm: Vec<f64>,
    pub filters: Vec<SiteLabel>,
    pub filter_width_nm: f64,
    pub detected_photons: f64,
    pub backscatter: bool,
    pub backscatter_settings: BackscatterSettings,
    pub fit: LifetimeOptions,
    /// Largest allowed spread of fitted lifetimes across diameters.
    pub max_spread_ns: f64,
}

impl Default for Fig6Config {
    fn default() -> Self {
        Self {
            diameters_nm: vec![300.0, 500.0, 700.0, 900.0, 1100.0],
            filters: vec![SiteLabel::Kk, SiteLabel::Hk],
            filter_width_nm: 8.0,
            detected_photons: 1e6,
            backscatter: true,
            backscatter_settings: BackscatterSettings::default(),
            fit: LifetimeOptions::default(),
            max_spread_ns: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanConfig {
    pub width_um: f64,
    pub height_um: f64,
    pub cell_um: f64,
    pub pitch_um: f64,
    pub diameter_nm: f64,
    /// Pillar array for x below this, bulk above.
    pub bulk_from_um: f64,
    pub dwell_ms: f64,
    pub density_per_um2: f64,
    pub beam: BeamSpec,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            width_um: 30.0,
            height_um: 15.0,
            cell_um: 0.05,
            pitch_um: 5.0,
            diameter_nm: 600.0,
            bulk_from_um: 15.0,
            dwell_ms: 10.0,
            density_per_um2: DEFAULT_DENSITY,
            beam: BeamSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut c: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        c.resolve(base);
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out_dir);
        for p in [&mut self.curve.path, &mut self.catalog.path, &mut self.fig4.spectra_dir].into_iter().flatten() {
            fix(p);
        }
    }

    pub fn catalog(&self) -> Result<Catalog, CliError> {
        let cat = match &self.catalog.path {
            Some(p) => Catalog::read_csv(crate::open(p)?).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?,
            None => Catalog::default(),
        };
        let cat = cat.with_line1173_class(self.catalog.line1173_class);
        cat.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cat)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_all_defaults() {
        let c = RunConfig::parse("", Path::new("/cfg")).unwrap();
        assert_eq!(c.out_dir, PathBuf::from("/cfg/out"));
        assert_eq!(RunConfig { out_dir: PathBuf::from("out"), ..c }, RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse("sede = 3", Path::new(".")).is_err());
        assert!(RunConfig::parse("[scan]\ndwel_ms = 3", Path::new(".")).is_err());
        assert!(RunConfig::parse("[collection.sizing]\ncell = 20", Path::new(".")).is_err());
    }

    #[test]
    fn paths_resolve_against_the_config_dir() {
        let c = RunConfig::parse("out_dir = \"/abs\"\n[curve]\npath = \"c.csv\"", Path::new("/etc/run")).unwrap();
        assert_eq!(c.out_dir, PathBuf::from("/abs"));
        assert_eq!(c.curve.path, Some(PathBuf::from("/etc/run/c.csv")));
    }

    #[test]
    fn nested_overrides() {
        let text = "[collection.objective]\nnumerical_aperture = 0.5\n[fig4.weights]\nkk = 5.0\n[fig6]\nfilters = [\"kk\"]\n";
        let c = RunConfig::parse(text, Path::new(".")).unwrap();
        assert_eq!(c.collection.objective.numerical_aperture, 0.5);
        assert_eq!(c.fig4.weights[&SiteLabel::Kk], 5.0);
        assert_eq!(c.fig6.filters, vec![SiteLabel::Kk]);
        assert_eq!(c.sweep.structures().len(), 10);
    }
}
