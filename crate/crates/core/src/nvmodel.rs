//! NV-center catalog, dipole geometry and orientation mixing of collection
//! efficiencies.
//!
//! Angles are in degrees. The c-axis is the surface normal; `beta` is the
//! angle of an emission dipole from it, folded into `[0, 90]`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const BASAL_AXIS_ANGLE_DEG: f64 = 71.0;
pub const ZPL_RANGE_NM: (f64, f64) = (1170.0, 1245.0);

#[derive(Debug, Error)]
pub enum NvError {
    #[error("no collection entry for {0}")]
    MissingDiameter(String),
    #[error("beta = {0} deg is outside [0, 90]")]
    BetaOutOfRange(f64),
    #[error("invalid curve: {0}")]
    InvalidCurve(String),
    #[error("invalid site: {0}")]
    InvalidSite(String),
    #[error("malformed catalog: {0}")]
    Parse(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SiteLabel {
    Hh,
    Kk,
    Hk,
    Kh,
    Line1173,
}

impl SiteLabel {
    pub const ALL: [SiteLabel; 5] = [SiteLabel::Line1173, SiteLabel::Kh, SiteLabel::Hh, SiteLabel::Kk, SiteLabel::Hk];

    pub fn as_str(self) -> &'static str {
        match self {
            SiteLabel::Hh => "hh",
            SiteLabel::Kk => "kk",
            SiteLabel::Hk => "hk",
            SiteLabel::Kh => "kh",
            SiteLabel::Line1173 => "line1173",
        }
    }
}

impl std::str::FromStr for SiteLabel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "hh" => Ok(SiteLabel::Hh),
            "kk" => Ok(SiteLabel::Kk),
            "hk" => Ok(SiteLabel::Hk),
            "kh" => Ok(SiteLabel::Kh),
            "line1173" => Ok(SiteLabel::Line1173),
            _ => Err(format!("unknown site label {s:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SiteClass {
    Axial,
    Basal,
}

impl SiteClass {
    pub fn axis_angle_deg(self) -> f64 {
        match self {
            SiteClass::Axial => 0.0,
            SiteClass::Basal => BASAL_AXIS_ANGLE_DEG,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SiteClass::Axial => "axial",
            SiteClass::Basal => "basal",
        }
    }
}

impl std::str::FromStr for SiteClass {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "axial" => Ok(SiteClass::Axial),
            "basal" => Ok(SiteClass::Basal),
            _ => Err(format!("unknown site class {s:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NvSite {
    pub label: SiteLabel,
    pub zpl_nm: f64,
    pub class: SiteClass,
    pub nv_axis_angle_deg: f64,
    pub lifetime_ns: f64,
}

impl NvSite {
    pub fn new(label: SiteLabel, zpl_nm: f64, class: SiteClass, lifetime_ns: f64) -> Self {
        Self { label, zpl_nm, class, nv_axis_angle_deg: class.axis_angle_deg(), lifetime_ns }
    }

    pub fn validate(&self) -> Result<(), NvError> {
        if (self.nv_axis_angle_deg - self.class.axis_angle_deg()).abs() > 1e-12 {
            return Err(NvError::InvalidSite(format!(
                "{} is {} but its axis angle is {}",
                self.label.as_str(),
                self.class.as_str(),
                self.nv_axis_angle_deg
            )));
        }
        if !(self.zpl_nm >= ZPL_RANGE_NM.0 && self.zpl_nm <= ZPL_RANGE_NM.1) {
            return Err(NvError::InvalidSite(format!("ZPL {} nm outside {:?}", self.zpl_nm, ZPL_RANGE_NM)));
        }
        if !(self.lifetime_ns > 0.0) {
            return Err(NvError::InvalidSite("lifetime must be positive".into()));
        }
        Ok(())
    }
}

pub const LIFETIME_KK_NS: f64 = 2.8;
pub const LIFETIME_HK_NS: f64 = 2.2;
pub const LIFETIME_COLLECTIVE_NS: f64 = 2.5;

/// The five ZPLs, ordered by wavelength.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub sites: Vec<NvSite>,
}

impl Default for Catalog {
    fn default() -> Self {
        use SiteClass::*;
        use SiteLabel::*;
        Self {
            sites: vec![
                NvSite::new(Line1173, 1173.0, Basal, LIFETIME_COLLECTIVE_NS),
                NvSite::new(Kh, 1176.0, Basal, LIFETIME_COLLECTIVE_NS),
                NvSite::new(Hh, 1179.0, Axial, LIFETIME_COLLECTIVE_NS),
                NvSite::new(Kk, 1222.0, Axial, LIFETIME_KK_NS),
                NvSite::new(Hk, 1242.0, Basal, LIFETIME_HK_NS),
            ],
        }
    }
}

impl Catalog {
    /// Overrides the presumed class of the 1173 nm line.
    pub fn with_line1173_class(mut self, class: SiteClass) -> Self {
        for s in &mut self.sites {
            if s.label == SiteLabel::Line1173 {
                s.class = class;
                s.nv_axis_angle_deg = class.axis_angle_deg();
            }
        }
        self
    }

    pub fn site(&self, label: SiteLabel) -> Option<&NvSite> {
        self.sites.iter().find(|s| s.label == label)
    }

    /// Site whose ZPL is nearest `wavelength_nm`, if within `tolerance_nm`.
    pub fn nearest(&self, wavelength_nm: f64, tolerance_nm: f64) -> Option<&NvSite> {
        self.sites
            .iter()
            .filter(|s| (s.zpl_nm - wavelength_nm).abs() <= tolerance_nm)
            .min_by(|a, b| (a.zpl_nm - wavelength_nm).abs().total_cmp(&(b.zpl_nm - wavelength_nm).abs()))
    }

    pub fn validate(&self) -> Result<(), NvError> {
        for s in &self.sites {
            s.validate()?;
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), NvError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["label", "zpl_nm", "class", "axis_angle_deg"])?;
        for s in &self.sites {
            w.write_record([
                s.label.as_str().to_string(),
                format!("{}", s.zpl_nm),
                s.class.as_str().to_string(),
                format!("{}", s.nv_axis_angle_deg),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Reads a catalog CSV. Lifetimes are not part of the file and are taken
    /// from the default catalog by label.
    pub fn read_csv<R: Read>(input: R) -> Result<Self, NvError> {
        let defaults = Catalog::default();
        let mut r = csv::Reader::from_reader(input);
        let mut sites = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let get = |i: usize| rec.get(i).map(str::trim).unwrap_or("");
            let label: SiteLabel = get(0).parse().map_err(NvError::Parse)?;
            let num = |i: usize| get(i).parse::<f64>().map_err(|_| NvError::Parse(format!("bad number {:?}", get(i))));
            let site = NvSite {
                label,
                zpl_nm: num(1)?,
                class: get(2).parse().map_err(NvError::Parse)?,
                nv_axis_angle_deg: num(3)?,
                lifetime_ns: defaults.site(label).map_or(LIFETIME_COLLECTIVE_NS, |s| s.lifetime_ns),
            };
            site.validate()?;
            sites.push(site);
        }
        Ok(Self { sites })
    }
}

/// Collection efficiencies for dipoles parallel (`c0`) and perpendicular
/// (`c90`) to the c-axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub c0: f64,
    pub c90: f64,
}

/// `c(0, d)` and `c(90, d)` per pillar diameter plus the bulk reference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollectionCurve {
    pub bulk: Option<CurvePoint>,
    /// Sorted by diameter.
    pub points: Vec<(f64, CurvePoint)>,
    /// Linear interpolation between simulated diameters; off by default.
    #[serde(default)]
    pub interpolate: bool,
}

impl CollectionCurve {
    pub fn new(bulk: Option<CurvePoint>, mut points: Vec<(f64, CurvePoint)>) -> Result<Self, NvError> {
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        let curve = Self { bulk, points, interpolate: false };
        curve.validate()?;
        Ok(curve)
    }

    pub fn validate(&self) -> Result<(), NvError> {
        let ok = |p: &CurvePoint| (0.0..=1.0).contains(&p.c0) && (0.0..=1.0).contains(&p.c90);
        if self.bulk.as_ref().is_some_and(|p| !ok(p)) || self.points.iter().any(|(_, p)| !ok(p)) {
            return Err(NvError::InvalidCurve("efficiencies must lie in [0, 1]".into()));
        }
        if self.points.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(NvError::InvalidCurve("diameters must be distinct".into()));
        }
        Ok(())
    }

    pub fn with_interpolation(mut self, on: bool) -> Self {
        self.interpolate = on;
        self
    }

    /// Entry for a diameter, or the bulk reference for `None`.
    pub fn lookup(&self, diameter_nm: Option<f64>) -> Result<CurvePoint, NvError> {
        let Some(d) = diameter_nm else {
            return self.bulk.ok_or_else(|| NvError::MissingDiameter("bulk".into()));
        };
        if let Some((_, p)) = self.points.iter().find(|(x, _)| (x - d).abs() < 1e-9) {
            return Ok(*p);
        }
        if self.interpolate {
            if let Some(i) = self.points.windows(2).position(|w| w[0].0 < d && d < w[1].0) {
                let ((x0, p0), (x1, p1)) = (self.points[i], self.points[i + 1]);
                let t = (d - x0) / (x1 - x0);
                return Ok(CurvePoint { c0: p0.c0 + t * (p1.c0 - p0.c0), c90: p0.c90 + t * (p1.c90 - p0.c90) });
            }
        }
        Err(NvError::MissingDiameter(format!("d = {d} nm")))
    }

    pub fn diameters(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.0).collect()
    }

    /// `diameter_nm,c0,c90`; the bulk reference row has diameter `bulk`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), NvError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["diameter_nm", "c0", "c90"])?;
        if let Some(b) = self.bulk {
            w.write_record(["bulk".to_string(), format!("{}", b.c0), format!("{}", b.c90)])?;
        }
        for (d, p) in &self.points {
            w.write_record([format!("{d}"), format!("{}", p.c0), format!("{}", p.c90)])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, NvError> {
        let mut r = csv::Reader::from_reader(input);
        let (mut bulk, mut points) = (None, Vec::new());
        for rec in r.records() {
            let rec = rec?;
            let get = |i: usize| rec.get(i).map(str::trim).unwrap_or("");
            let num = |i: usize| get(i).parse::<f64>().map_err(|_| NvError::Parse(format!("bad number {:?}", get(i))));
            let p = CurvePoint { c0: num(1)?, c90: num(2)? };
            if get(0) == "bulk" {
                bulk = Some(p);
            } else {
                points.push((num(0)?, p));
            }
        }
        Self::new(bulk, points)
    }
}

/// `c0 cos^2(beta) + c90 sin^2(beta)` for a single point.
pub fn mix_point(p: CurvePoint, beta_deg: f64) -> f64 {
    let (s, c) = beta_deg.to_radians().sin_cos();
    p.c0 * c * c + p.c90 * s * s
}

pub fn mix_collection(curve: &CollectionCurve, diameter_nm: Option<f64>, beta_deg: f64) -> Result<f64, NvError> {
    if !(0.0..=90.0).contains(&beta_deg) {
        return Err(NvError::BetaOutOfRange(beta_deg));
    }
    Ok(mix_point(curve.lookup(diameter_nm)?, beta_deg))
}

/// Unit vectors of the two degenerate emission dipoles of `site`, both
/// perpendicular to its NV axis. The axis is tilted from the c-axis (z) in
/// the xz plane; `phi_deg` rotates the pair within the perpendicular plane.
pub fn site_dipole_vectors(site: &NvSite, phi_deg: f64) -> ([f64; 3], [f64; 3]) {
    let (st, ct) = site.nv_axis_angle_deg.to_radians().sin_cos();
    let (sp, cp) = phi_deg.to_radians().sin_cos();
    let u1 = [ct, 0.0, -st];
    let u2 = [0.0, 1.0, 0.0];
    let d1 = [cp * u1[0] + sp * u2[0], cp * u1[1] + sp * u2[1], cp * u1[2] + sp * u2[2]];
    let d2 = [-sp * u1[0] + cp * u2[0], -sp * u1[1] + cp * u2[1], -sp * u1[2] + cp * u2[2]];
    (d1, d2)
}

/// Angle from the c-axis of a unit vector, folded into `[0, 90]`.
pub fn beta_of(d: [f64; 3]) -> f64 {
    d[2].abs().min(1.0).acos().to_degrees()
}

pub fn site_dipole_pair(site: &NvSite, phi_deg: f64) -> (f64, f64) {
    let (d1, d2) = site_dipole_vectors(site, phi_deg);
    (beta_of(d1), beta_of(d2))
}

/// Smallest `beta` any dipole of the site can take.
pub fn min_beta(site: &NvSite) -> f64 {
    90.0 - site.nv_axis_angle_deg
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollectionBand {
    pub min: f64,
    pub max: f64,
    /// Incoherent average over the degenerate pair.
    pub pair_avg: f64,
}

/// Range of collection efficiency over the site's possible dipole
/// orientations.
///
/// `min`/`max` span single dipoles with `beta` in `[min_beta, 90]`. The
/// pair average does not depend on the in-plane angle (`cos^2 b1 + cos^2 b2
/// = sin^2` of the axis angle), so it is reported on its own.
pub fn site_collection_band(curve: &CollectionCurve, diameter_nm: Option<f64>, site: &NvSite) -> Result<CollectionBand, NvError> {
    let p = curve.lookup(diameter_nm)?;
    let a = mix_point(p, min_beta(site));
    let b = mix_point(p, 90.0);
    let (b1, b2) = site_dipole_pair(site, 0.0);
    Ok(CollectionBand { min: a.min(b), max: a.max(b), pair_avg: 0.5 * (mix_point(p, b1) + mix_point(p, b2)) })
}
