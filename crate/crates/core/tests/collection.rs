use nvsic::collection::{simulate_collection, CollectionRun, CollectionSettings};
use nvsic::farfield::DipoleAxis;
use nvsic::geometry::StructureSpec;

fn vacuum_spec() -> StructureSpec {
    let mut s = StructureSpec::bulk();
    s.substrate_index = 1.0;
    s.emitter_depth_nm = Some(25.0);
    s
}

fn run(spec: &StructureSpec, o: DipoleAxis, dx: f64) -> CollectionRun {
    simulate_collection(spec, o, &CollectionSettings::default().with_cell_size(dx)).unwrap()
}

/// Least-squares scale of `model` onto the measured intensities, then the
/// relative RMS residual.
fn pattern_error(r: &CollectionRun, theta_max: f64, model: impl Fn(f64, f64) -> f64) -> f64 {
    let s = &r.spectrum;
    let pts: Vec<(f64, f64)> = s
        .bins
        .iter()
        .filter_map(|b| {
            let (t, p) = s.angles(b);
            (t <= theta_max).then(|| (s.intensity(b), model(t, p)))
        })
        .collect();
    let scale = pts.iter().map(|(i, m)| i * m).sum::<f64>() / pts.iter().map(|(_, m)| m * m).sum::<f64>();
    let rms = (pts.iter().map(|(i, m)| (i - scale * m).powi(2)).sum::<f64>() / pts.len() as f64).sqrt();
    let mean = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
    rms / mean
}

#[test]
fn vacuum_dipole_matches_the_analytic_pattern() {
    let spec = vacuum_spec();
    let h = run(&spec, DipoleAxis::Horizontal, 50.0);
    let v = run(&spec, DipoleAxis::Vertical, 50.0);
    assert!(h.warning.is_none() && v.warning.is_none());
    let lim = 60f64.to_radians();
    let eh = pattern_error(&h, lim, |t, p| 1.0 - (t.sin() * p.cos()).powi(2));
    let ev = pattern_error(&v, lim, |t, _| t.sin().powi(2));
    assert!(eh < 0.05, "{eh}");
    assert!(ev < 0.05, "{ev}");

    // upper half-space carries half the power of a dipole in vacuum
    for r in [&h, &v] {
        let up = r.spectrum.propagating_power() / r.box_flux;
        assert!((up - 0.5).abs() < 0.02, "{up}");
    }

    // power inside a cone of half-angle asin(NA), over the full-sphere total
    let c = (1.0 - 0.85f64.powi(2)).sqrt();
    let (cap, cube) = (1.0 - c, (1.0 - c.powi(3)) / 3.0);
    let want_h = 0.75 * (cap - 0.5 * (cap - cube));
    let want_v = 0.75 * (cap - cube);
    assert!((h.result.efficiency / want_h - 1.0).abs() < 0.01, "{} vs {want_h}", h.result.efficiency);
    assert!((v.result.efficiency / want_v - 1.0).abs() < 0.01, "{} vs {want_v}", v.result.efficiency);
    // the plane spectrum misses only what leaves through the side walls
    assert!((h.plane_efficiency / h.result.efficiency - 1.0).abs() < 0.05);
}

#[test]
fn bulk_favours_horizontal_dipoles() {
    let spec = StructureSpec::bulk();
    let h = run(&spec, DipoleAxis::Horizontal, 50.0).result.efficiency;
    let v = run(&spec, DipoleAxis::Vertical, 50.0).result.efficiency;
    assert!(h > 3.0 * v, "{h} {v}");
    assert!(h < 0.1 && v > 0.0);
}

#[test]
fn pillar_rings_longer_than_vacuum() {
    let vac = run(&vacuum_spec(), DipoleAxis::Horizontal, 50.0);
    let pil = run(&StructureSpec::pillar(800.0), DipoleAxis::Horizontal, 50.0);
    assert!(pil.steps > vac.steps);
    assert!(pil.warning.is_none());
}
