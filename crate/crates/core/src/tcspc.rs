//! Time-correlated single-photon counting: Monte Carlo emission through a
//! superconducting-nanowire detector chain into a delay histogram, bandpass
//! selection of emission components, and lifetime fits.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, Exp, Geometric, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fitkit::{fwhm_to_sigma, lm_fit, BiexpDecay, DecayModel, FitError, FitProblem, LorentzianPeak, Model};
use crate::nvmodel::{Catalog, SiteLabel};
use crate::rng::substream;

pub const BACKSCATTER_TAU_NS: f64 = 0.54;
/// Pulses per RNG substream.
pub const BLOCK_PULSES: u64 = 1 << 16;

#[derive(Debug, Error)]
pub enum TcspcError {
    #[error("invalid detector: {0}")]
    Detector(String),
    #[error("invalid emission mix: {0}")]
    Mix(String),
    #[error("invalid acquisition: {0}")]
    Acquisition(String),
    #[error("invalid filter: {0} >= {1}")]
    Filter(f64, f64),
    #[error("histogram is empty")]
    Empty,
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error("lifetime fit did not converge ({status})")]
    NotConverged { status: String, last: Box<LifetimeFit> },
    #[error("malformed histogram file: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorModel {
    pub efficiency: f64,
    pub dark_rate_hz: f64,
    pub dead_time_ns: f64,
    pub irf_fwhm_ps: f64,
}

impl Default for DetectorModel {
    fn default() -> Self {
        Self { efficiency: 0.80, dark_rate_hz: 100.0, dead_time_ns: 50.0, irf_fwhm_ps: 170.0 }
    }
}

impl DetectorModel {
    pub fn ideal() -> Self {
        Self { efficiency: 1.0, dark_rate_hz: 0.0, dead_time_ns: 0.0, irf_fwhm_ps: 0.0 }
    }

    pub fn validate(&self) -> Result<(), TcspcError> {
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(TcspcError::Detector(format!("efficiency {} outside [0, 1]", self.efficiency)));
        }
        if !(self.dark_rate_hz >= 0.0 && self.dead_time_ns >= 0.0 && self.irf_fwhm_ps >= 0.0) {
            return Err(TcspcError::Detector("rates and times must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmissionComponent {
    pub weight: f64,
    pub lifetime_ns: f64,
    pub label: String,
}

/// Photon-number weights of exponential emission components.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EmissionMix {
    pub components: Vec<EmissionComponent>,
}

impl EmissionMix {
    pub fn single(lifetime_ns: f64) -> Self {
        Self { components: vec![EmissionComponent { weight: 1.0, lifetime_ns, label: "signal".into() }] }
    }

    pub fn push(mut self, weight: f64, lifetime_ns: f64, label: &str) -> Self {
        self.components.push(EmissionComponent { weight, lifetime_ns, label: label.into() });
        self
    }

    /// Peak amplitude (weight over lifetime) summed over components.
    pub fn amplitude(&self) -> f64 {
        self.components.iter().map(|c| c.weight / c.lifetime_ns).sum()
    }

    /// Adds a fast pump-reflection component whose peak amplitude is
    /// `amplitude_ratio` times that of the current mix.
    pub fn with_backscatter(self, amplitude_ratio: f64) -> Self {
        let w = amplitude_ratio * self.amplitude() * BACKSCATTER_TAU_NS;
        self.push(w, BACKSCATTER_TAU_NS, "backscatter")
    }

    pub fn total_weight(&self) -> f64 {
        self.components.iter().map(|c| c.weight).sum()
    }

    pub fn validate(&self) -> Result<(), TcspcError> {
        if self.components.iter().any(|c| !(c.weight >= 0.0 && c.lifetime_ns > 0.0)) {
            return Err(TcspcError::Mix("weights must be >= 0 and lifetimes > 0".into()));
        }
        Ok(())
    }
}

/// Ideal top-hat passband.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandpassFilter {
    pub low_nm: f64,
    pub high_nm: f64,
}

impl BandpassFilter {
    pub fn new(low_nm: f64, high_nm: f64) -> Result<Self, TcspcError> {
        if !(low_nm < high_nm) {
            return Err(TcspcError::Filter(low_nm, high_nm));
        }
        Ok(Self { low_nm, high_nm })
    }

    pub fn around(center_nm: f64, width_nm: f64) -> Self {
        Self { low_nm: center_nm - 0.5 * width_nm, high_nm: center_nm + 0.5 * width_nm }
    }

    pub fn open() -> Self {
        Self { low_nm: f64::NEG_INFINITY, high_nm: f64::INFINITY }
    }

    /// Fraction of a Lorentzian's area inside the band.
    pub fn fraction(&self, peak: &LorentzianPeak) -> f64 {
        let cdf = |x: f64| (2.0 * (x - peak.center) / peak.fwhm).atan() / PI;
        (cdf(self.high_nm) - cdf(self.low_nm)).clamp(0.0, 1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackscatterSettings {
    /// Peak amplitude relative to the filtered signal.
    pub amplitude_ratio: f64,
    /// Extra transmission applied to the reflected pump.
    pub attenuation: f64,
}

impl Default for BackscatterSettings {
    fn default() -> Self {
        Self { amplitude_ratio: 5.0, attenuation: 1.0 }
    }
}

/// Emission components behind a bandpass filter. Each ZPL contributes the
/// in-band part of its area with its site lifetime.
pub fn filter_mix(
    zpl: &[(SiteLabel, LorentzianPeak)],
    filter: &BandpassFilter,
    catalog: &Catalog,
    backscatter: Option<BackscatterSettings>,
) -> Result<EmissionMix, TcspcError> {
    let mut mix = EmissionMix::default();
    for (label, peak) in zpl {
        let site = catalog.site(*label).ok_or_else(|| TcspcError::Mix(format!("{} not in catalog", label.as_str())))?;
        mix = mix.push(peak.area.max(0.0) * filter.fraction(peak), site.lifetime_ns, label.as_str());
    }
    if let Some(b) = backscatter {
        let w = b.attenuation * b.amplitude_ratio * mix.amplitude() * BACKSCATTER_TAU_NS;
        mix = mix.push(w, BACKSCATTER_TAU_NS, "backscatter");
    }
    mix.validate()?;
    Ok(mix)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Acquisition {
    pub rep_rate_mhz: f64,
    pub duration_s: f64,
    /// Mean photons reaching the detector per pulse, summed over components.
    pub photons_per_pulse: f64,
    pub bin_ps: f64,
    /// Delay of the excitation pulse within the period.
    pub t0_ns: f64,
}

impl Default for Acquisition {
    fn default() -> Self {
        // 0.025 arriving photons give 0.02 detected at the default efficiency
        Self { rep_rate_mhz: 20.0, duration_s: 1.0, photons_per_pulse: 0.025, bin_ps: 16.0, t0_ns: 2.0 }
    }
}

impl Acquisition {
    pub fn period_ns(&self) -> f64 {
        1e3 / self.rep_rate_mhz
    }

    pub fn pulses(&self) -> u64 {
        (self.duration_s * self.rep_rate_mhz * 1e6).round() as u64
    }

    /// Duration giving about `n` detected signal photons.
    pub fn for_detected(mut self, n: f64, efficiency: f64) -> Self {
        self.duration_s = n / (self.photons_per_pulse * efficiency * self.rep_rate_mhz * 1e6);
        self
    }

    pub fn validate(&self) -> Result<(), TcspcError> {
        if !(self.rep_rate_mhz > 0.0 && self.duration_s > 0.0 && self.bin_ps > 0.0 && self.photons_per_pulse >= 0.0) {
            return Err(TcspcError::Acquisition("rates, duration and bin width must be positive".into()));
        }
        if !(self.t0_ns >= 0.0 && self.t0_ns < self.period_ns()) {
            return Err(TcspcError::Acquisition(format!("t0 {} ns outside the {} ns period", self.t0_ns, self.period_ns())));
        }
        if self.bin_ps * 1e-3 > self.period_ns() {
            return Err(TcspcError::Acquisition("bin wider than the pulse period".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayHistogram {
    pub bin_ps: f64,
    pub counts: Vec<u64>,
    pub total_pulses: u64,
    pub rep_rate_mhz: f64,
    pub duration_s: f64,
    pub irf_fwhm_ps: f64,
    pub seed: u64,
    /// Photons reaching the detector before efficiency and dead time.
    pub arrived: u64,
    pub warning: Option<String>,
}

impl DecayHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Bin centers in ns.
    pub fn times_ns(&self) -> Vec<f64> {
        (0..self.counts.len()).map(|i| (i as f64 + 0.5) * self.bin_ps * 1e-3).collect()
    }

    pub fn peak_bin(&self) -> usize {
        self.counts.iter().enumerate().max_by_key(|(i, c)| (**c, std::cmp::Reverse(*i))).map_or(0, |(i, _)| i)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), TcspcError> {
        writeln!(out, "# rep_rate_mhz={}", self.rep_rate_mhz)?;
        writeln!(out, "# bin_ps={}", self.bin_ps)?;
        writeln!(out, "# irf_fwhm_ps={}", self.irf_fwhm_ps)?;
        writeln!(out, "# seed={}", self.seed)?;
        writeln!(out, "# duration_s={}", self.duration_s)?;
        writeln!(out, "# total_pulses={}", self.total_pulses)?;
        writeln!(out, "time_ps,counts")?;
        for (i, c) in self.counts.iter().enumerate() {
            writeln!(out, "{},{}", i as f64 * self.bin_ps, c)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self, TcspcError> {
        let mut h = DecayHistogram {
            bin_ps: 0.0,
            counts: Vec::new(),
            total_pulses: 0,
            rep_rate_mhz: 0.0,
            duration_s: 0.0,
            irf_fwhm_ps: 0.0,
            seed: 0,
            arrived: 0,
            warning: None,
        };
        let bad = |l: &str| TcspcError::Parse(l.to_string());
        let mut times = Vec::new();
        for line in input.lines() {
            let line = line?;
            let l = line.trim();
            if l.is_empty() || l == "time_ps,counts" {
                continue;
            }
            if let Some(meta) = l.strip_prefix('#') {
                let Some((k, v)) = meta.trim().split_once('=') else { continue };
                let v = v.trim();
                match k.trim() {
                    "rep_rate_mhz" => h.rep_rate_mhz = v.parse().map_err(|_| bad(l))?,
                    "bin_ps" => h.bin_ps = v.parse().map_err(|_| bad(l))?,
                    "irf_fwhm_ps" => h.irf_fwhm_ps = v.parse().map_err(|_| bad(l))?,
                    "seed" => h.seed = v.parse().map_err(|_| bad(l))?,
                    "duration_s" => h.duration_s = v.parse().map_err(|_| bad(l))?,
                    "total_pulses" => h.total_pulses = v.parse().map_err(|_| bad(l))?,
                    _ => {}
                }
                continue;
            }
            let (t, c) = l.split_once(',').ok_or_else(|| bad(l))?;
            times.push(t.trim().parse::<f64>().map_err(|_| bad(l))?);
            h.counts.push(c.trim().parse::<f64>().map_err(|_| bad(l))?.round().max(0.0) as u64);
        }
        if h.bin_ps <= 0.0 {
            h.bin_ps = match times.as_slice() {
                [a, b, ..] => b - a,
                _ => return Err(TcspcError::Parse("bin width missing".into())),
            };
        }
        Ok(h)
    }
}

/// Detection times (absolute, ns) of one block of pulses, before dead time.
fn simulate_block(block: u64, pulses: u64, mix: &EmissionMix, det: &DetectorModel, acq: &Acquisition, seed: u64) -> (Vec<f64>, u64) {
    let mut rng = substream(seed, block);
    let period = acq.period_ns();
    let start = block * BLOCK_PULSES;
    let end = (start + BLOCK_PULSES).min(pulses);
    let mut events = Vec::new();
    let mut arrived = 0;

    let mu = acq.photons_per_pulse;
    let total = mix.total_weight();
    if mu > 0.0 && total > 0.0 {
        let cumulative: Vec<f64> = mix
            .components
            .iter()
            .scan(0.0, |acc, c| {
                *acc += c.weight / total;
                Some(*acc)
            })
            .collect();
        let exps: Vec<Exp<f64>> = mix.components.iter().map(|c| Exp::new(1.0 / c.lifetime_ns).expect("positive lifetime")).collect();
        let jitter = Normal::new(0.0, fwhm_to_sigma(det.irf_fwhm_ps * 1e-3)).expect("finite jitter");
        let p_any = -(-mu).exp_m1();
        let skip = Geometric::new(p_any).expect("probability in (0, 1]");
        let mut i = start + skip.sample(&mut rng);
        while i < end {
            // photon number conditioned on at least one
            let u: f64 = rng.random::<f64>() * p_any;
            let (mut k, mut term) = (1u64, (-mu).exp() * mu);
            let mut acc = term;
            while acc < u && k < 1000 {
                k += 1;
                term *= mu / k as f64;
                acc += term;
            }
            for _ in 0..k {
                arrived += 1;
                let r: f64 = rng.random();
                let c = cumulative.iter().position(|&x| r < x).unwrap_or(cumulative.len() - 1);
                let delay = acq.t0_ns + exps[c].sample(&mut rng) + jitter.sample(&mut rng);
                if rng.random::<f64>() < det.efficiency {
                    events.push(i as f64 * period + delay);
                }
            }
            i += 1 + skip.sample(&mut rng);
        }
    }
    if det.dark_rate_hz > 0.0 {
        let span = (end - start) as f64 * period;
        let n = Poisson::new(det.dark_rate_hz * span * 1e-9).map_or(0, |d| d.sample(&mut rng) as u64);
        for _ in 0..n {
            events.push(start as f64 * period + rng.random::<f64>() * span);
        }
    }
    (events, arrived)
}

/// Runs the acquisition. Pulse blocks are simulated in parallel, each from
/// its own substream, then merged onto one timeline where a non-paralyzable
/// dead time is applied before folding into the histogram.
pub fn simulate_stream(mix: &EmissionMix, det: &DetectorModel, acq: &Acquisition, seed: u64) -> Result<DecayHistogram, TcspcError> {
    mix.validate()?;
    det.validate()?;
    acq.validate()?;
    let pulses = acq.pulses();
    let blocks = pulses.div_ceil(BLOCK_PULSES);
    let parts: Vec<(Vec<f64>, u64)> = (0..blocks).into_par_iter().map(|b| simulate_block(b, pulses, mix, det, acq, seed)).collect();
    let arrived = parts.iter().map(|p| p.1).sum();
    let mut times: Vec<f64> = parts.into_iter().flat_map(|p| p.0).collect();
    times.par_sort_unstable_by(f64::total_cmp);

    let period = acq.period_ns();
    let bin = acq.bin_ps * 1e-3;
    let n_bins = (period / bin + 1e-9).floor() as usize;
    let mut counts = vec![0u64; n_bins];
    let mut ready = f64::NEG_INFINITY;
    for t in times {
        if t < ready {
            continue;
        }
        ready = t + det.dead_time_ns;
        let phase = t - (t / period).floor() * period;
        let b = (phase / bin) as usize;
        if b < n_bins {
            counts[b] += 1;
        }
    }

    let rate = acq.photons_per_pulse * det.efficiency * acq.rep_rate_mhz * 1e6 + det.dark_rate_hz;
    let warning = (det.dead_time_ns > 0.0 && rate * det.dead_time_ns * 1e-9 > 1.0)
        .then(|| format!("detected rate {rate:.3e} Hz exceeds 1/dead_time; histogram is piled up"));
    Ok(DecayHistogram {
        bin_ps: acq.bin_ps,
        counts,
        total_pulses: pulses,
        rep_rate_mhz: acq.rep_rate_mhz,
        duration_s: acq.duration_s,
        irf_fwhm_ps: det.irf_fwhm_ps,
        seed,
        arrived,
        warning,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitWindow {
    /// From the peak bin to the end of the period.
    #[default]
    Tail,
    /// The whole period, rise included.
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LifetimeOptions {
    /// Hold the second lifetime at `tau2_ns`.
    pub fix_tau2: bool,
    pub tau2_ns: f64,
    /// Drop the second component entirely.
    pub single: bool,
    pub window: FitWindow,
    /// Reweight with the fitted model's variance until stable, which gives
    /// the Poisson maximum-likelihood estimate. Off uses data weights
    /// `sqrt(max(y, 1))` only, which are biased in sparse tails.
    pub poisson_ml: bool,
}

impl Default for LifetimeOptions {
    fn default() -> Self {
        Self { fix_tau2: true, tau2_ns: BACKSCATTER_TAU_NS, single: false, window: FitWindow::Tail, poisson_ml: true }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LifetimeFit {
    pub model: DecayModel,
    /// Standard errors in the same layout; zero for held parameters.
    pub errors: DecayModel,
    pub reduced_chi2: f64,
    pub converged: bool,
    pub first_bin: usize,
}

struct Stage<'a> {
    hist: &'a DecayHistogram,
    options: &'a LifetimeOptions,
    first: usize,
    init: DecayModel,
    hold_t0: bool,
    hold_tau2: bool,
}

fn fit_stage(st: &Stage) -> Result<LifetimeFit, TcspcError> {
    let t = st.hist.times_ns();
    let y: Vec<f64> = st.hist.counts.iter().map(|&c| c as f64).collect();
    let tp = t[st.hist.peak_bin()];
    let period = t.last().copied().unwrap_or(0.0);
    let model = BiexpDecay::from_ps(st.hist.irf_fwhm_ps);
    let lower = vec![0.0, 0.01, 0.0, 0.01, 0.0, (tp - 2.0).max(0.0)];
    let upper = vec![f64::INFINITY, 100.0, f64::INFINITY, 100.0, f64::INFINITY, (tp + 1.0).min(period)];
    let mut init = st.init.to_params();
    for i in 0..6 {
        init[i] = init[i].clamp(lower[i], upper[i]);
    }
    let mut pr = FitProblem::new(&model, t[st.first..].to_vec(), y[st.first..].to_vec(), init).with_bounds(lower, upper);
    if st.options.single {
        pr = pr.fix(2).fix(3);
    } else if st.hold_tau2 {
        pr = pr.fix(3);
    }
    if st.hold_t0 {
        pr = pr.fix(5);
    }
    let mut r = lm_fit(&pr)?;
    if st.options.poisson_ml {
        for _ in 0..8 {
            if !r.converged {
                break;
            }
            pr.sigma = pr.x.iter().map(|&x| model.eval(x, &r.params).max(1e-6).sqrt()).collect();
            pr.initial = r.params.clone();
            let next = lm_fit(&pr)?;
            let moved = next.params.iter().zip(&r.params).map(|(a, b)| (a - b).abs() / b.abs().max(1e-12)).fold(0.0, f64::max);
            r = next;
            if moved < 1e-6 {
                break;
            }
        }
    }
    let e: Vec<f64> = (0..6).map(|i| r.stderr(i)).collect();
    let fit = LifetimeFit {
        model: DecayModel::from_params(&r.params),
        errors: DecayModel::from_params(&e),
        reduced_chi2: r.reduced_chi2,
        converged: r.converged,
        first_bin: st.first,
    };
    if !r.converged {
        return Err(TcspcError::NotConverged { status: format!("{:?}", r.status), last: Box::new(fit) });
    }
    Ok(fit)
}

/// Fits a (bi)exponential decay convolved with the histogram's Gaussian
/// response, Poisson-weighted.
///
/// The whole period is fit first. For a tail fit, the window is then cut at
/// the peak bin and the onset `t0` from the first pass is held, since the
/// tail alone cannot separate it from the amplitudes. A free second
/// component that collapses to zero amplitude has no lifetime; it is then
/// held at its seed and the fit repeated.
pub fn fit_lifetime(hist: &DecayHistogram, options: &LifetimeOptions) -> Result<LifetimeFit, TcspcError> {
    if hist.total() == 0 {
        return Err(TcspcError::Empty);
    }
    let y: Vec<f64> = hist.counts.iter().map(|&c| c as f64).collect();
    let peak = hist.peak_bin();
    let n = y.len();
    let tail = &y[n - n / 10..];
    let b0 = tail.iter().sum::<f64>() / tail.len() as f64;
    let a0 = (y[peak] - b0).max(1.0);
    let init = DecayModel {
        a1: if options.single { a0 } else { 0.5 * a0 },
        tau1: 2.5,
        a2: if options.single { 0.0 } else { 0.5 * a0 },
        tau2: options.tau2_ns,
        baseline: b0,
        t0: hist.times_ns()[peak],
    };
    let mut st = Stage { hist, options, first: 0, init, hold_t0: false, hold_tau2: options.fix_tau2 };
    let mut full = fit_stage(&st);
    if !options.single && !options.fix_tau2 {
        let collapsed = match &full {
            Ok(f) => f.model.a2 <= 1e-9 * a0,
            Err(TcspcError::NotConverged { last, .. }) => last.model.a2 <= 1e-9 * a0,
            Err(_) => false,
        };
        if collapsed {
            st.hold_tau2 = true;
            full = fit_stage(&st);
        }
    }
    let full = full?;
    if options.window == FitWindow::Full {
        return Ok(full);
    }
    st.first = peak;
    st.init = full.model;
    st.hold_t0 = true;
    fit_stage(&st)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn acq(n: f64, det: &DetectorModel) -> Acquisition {
        Acquisition::default().for_detected(n, det.efficiency.max(1e-9))
    }

    #[test]
    fn no_efficiency_no_darks_is_empty() {
        let det = DetectorModel { efficiency: 0.0, dark_rate_hz: 0.0, ..Default::default() };
        let h = simulate_stream(&EmissionMix::single(2.8), &det, &Acquisition { duration_s: 0.01, ..Default::default() }, 1).unwrap();
        assert_eq!(h.total(), 0);
        assert!(h.arrived > 0);
    }

    #[test]
    fn mean_delay_estimates_lifetime() {
        let det = DetectorModel::ideal();
        let a = acq(1e6, &det);
        let h = simulate_stream(&EmissionMix::single(2.8), &det, &a, 3).unwrap();
        let n = h.total() as f64;
        assert!((n / 1e6 - 1.0).abs() < 0.01);
        let mean = h.times_ns().iter().zip(&h.counts).map(|(t, c)| (t - a.t0_ns) * *c as f64).sum::<f64>() / n;
        assert!((mean / 2.8 - 1.0).abs() < 0.01, "{mean}");
    }

    #[test]
    fn identical_for_any_thread_count() {
        let det = DetectorModel::default();
        let a = Acquisition { duration_s: 0.05, ..Default::default() };
        let mix = EmissionMix::single(2.8).with_backscatter(5.0);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| simulate_stream(&mix, &det, &a, 42).unwrap())
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn dead_time_never_adds_counts() {
        let mix = EmissionMix::single(2.8);
        let a = Acquisition { duration_s: 0.02, photons_per_pulse: 0.5, ..Default::default() };
        let mut last = u64::MAX;
        for dead in [0.0, 5.0, 20.0, 50.0, 120.0] {
            let det = DetectorModel { dead_time_ns: dead, ..Default::default() };
            let n = simulate_stream(&mix, &det, &a, 9).unwrap().total();
            assert!(n <= last);
            last = n;
        }
    }

    #[test]
    fn dead_time_caps_the_rate() {
        let det = DetectorModel::default();
        let a = Acquisition { duration_s: 0.01, photons_per_pulse: 5.0, ..Default::default() };
        let h = simulate_stream(&EmissionMix::single(2.8), &det, &a, 2).unwrap();
        let rate = h.total() as f64 / a.duration_s;
        assert!(rate <= 1e9 / det.dead_time_ns);
        assert!(h.warning.is_some());
        let calm = simulate_stream(&EmissionMix::single(2.8), &det, &Acquisition { duration_s: 0.01, ..Default::default() }, 2).unwrap();
        assert!(calm.warning.is_none());
    }

    #[test]
    fn dark_counts_match_rate() {
        let det = DetectorModel { efficiency: 0.0, ..Default::default() };
        let a = Acquisition { duration_s: 50.0, photons_per_pulse: 0.0, ..Default::default() };
        let h = simulate_stream(&EmissionMix::single(2.8), &det, &a, 4).unwrap();
        let expect = 100.0 * 50.0;
        assert!((h.total() as f64 - expect).abs() < 3.0 * expect.sqrt(), "{}", h.total());
    }

    #[test]
    fn total_counts_match_expected_rate() {
        let det = DetectorModel::default();
        let a = Acquisition { duration_s: 0.5, ..Default::default() };
        let h = simulate_stream(&EmissionMix::single(2.8), &det, &a, 6).unwrap();
        // dead-time losses at 2% per period occupancy are first order in the rate
        let r = a.photons_per_pulse * det.efficiency;
        let expect = a.pulses() as f64 * r * (1.0 - r * 0.5) + det.dark_rate_hz * a.duration_s;
        assert!((h.total() as f64 - expect).abs() < 3.0 * expect.sqrt() + 0.002 * expect, "{} {expect}", h.total());
    }

    #[test]
    fn histogram_csv_round_trip() {
        let h = simulate_stream(&EmissionMix::single(2.8), &DetectorModel::default(), &Acquisition { duration_s: 0.01, ..Default::default() }, 5).unwrap();
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        for key in ["# rep_rate_mhz=20", "# bin_ps=16", "# irf_fwhm_ps=170", "# seed=5", "time_ps,counts"] {
            assert!(text.contains(key), "{key}");
        }
        let back = DecayHistogram::read_csv(&buf[..]).unwrap();
        assert_eq!(back.counts, h.counts);
        assert_eq!((back.bin_ps, back.rep_rate_mhz, back.irf_fwhm_ps, back.seed), (16.0, 20.0, 170.0, 5));
        assert_eq!(h.counts.len(), 3125);
    }

    #[test]
    fn irf_sets_the_width_of_a_fast_component() {
        let det = DetectorModel { dark_rate_hz: 0.0, dead_time_ns: 0.0, ..Default::default() };
        let a = acq(2e5, &det);
        let h = simulate_stream(&EmissionMix::single(1e-4), &det, &a, 8).unwrap();
        let peak = h.peak_bin();
        let half = h.counts[peak] as f64 / 2.0;
        // linear interpolation of the half-maximum crossings
        let cross = |range: Box<dyn Iterator<Item = usize>>, step: isize| {
            for i in range {
                let j = (i as isize + step) as usize;
                if (h.counts[j] as f64) < half {
                    let (a, b) = (h.counts[i] as f64, h.counts[j] as f64);
                    return i as f64 + step as f64 * (a - half) / (a - b);
                }
            }
            unreachable!()
        };
        let lo = cross(Box::new((1..=peak).rev()), -1);
        let hi = cross(Box::new(peak..h.counts.len() - 1), 1);
        let fwhm = (hi - lo) * h.bin_ps;
        assert!((fwhm / 170.0 - 1.0).abs() < 0.1, "{fwhm}");
    }

    #[test]
    fn bandpass_selects_sites() {
        let cat = Catalog::default();
        let zpl: Vec<(SiteLabel, LorentzianPeak)> = cat.sites.iter().map(|s| (s.label, LorentzianPeak::new(100.0, s.zpl_nm, 1.5))).collect();
        let kk = filter_mix(&zpl, &BandpassFilter::around(1222.0, 8.0), &cat, None).unwrap();
        let main = kk.components.iter().max_by(|a, b| a.weight.total_cmp(&b.weight)).unwrap();
        assert_eq!(main.lifetime_ns, 2.8);
        assert!(main.weight > 0.95 * kk.total_weight());
        let hk = filter_mix(&zpl, &BandpassFilter::around(1242.0, 8.0), &cat, None).unwrap();
        let main = hk.components.iter().max_by(|a, b| a.weight.total_cmp(&b.weight)).unwrap();
        assert_eq!(main.lifetime_ns, 2.2);
        let none = filter_mix(&zpl, &BandpassFilter::new(1300.0, 1301.0).unwrap(), &cat, None).unwrap();
        assert!(none.total_weight() < 1e-4 * 500.0);
        assert!(BandpassFilter::new(2.0, 1.0).is_err());
        let p = LorentzianPeak::new(1.0, 0.0, 2.0);
        assert!((BandpassFilter::new(-1.0, 1.0).unwrap().fraction(&p) - 0.5).abs() < 1e-12);
        let with = filter_mix(&zpl, &BandpassFilter::around(1222.0, 8.0), &cat, Some(BackscatterSettings::default())).unwrap();
        let bs = with.components.last().unwrap();
        assert!((bs.weight / BACKSCATTER_TAU_NS / kk.amplitude() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn biexponential_fit_recovers_lifetime() {
        let det = DetectorModel::default();
        let mix = EmissionMix::single(2.8).with_backscatter(5.0);
        let h = simulate_stream(&mix, &det, &acq(1e6, &det), 11).unwrap();
        let f = fit_lifetime(&h, &LifetimeOptions::default()).unwrap();
        assert!((f.model.tau1 - 2.8).abs() < 0.1, "{:?}", f.model);
        assert_eq!(f.model.tau2, BACKSCATTER_TAU_NS);
        assert!(f.errors.tau1 > 0.0 && f.errors.tau2 == 0.0);
        let full = fit_lifetime(&h, &LifetimeOptions { window: FitWindow::Full, ..Default::default() }).unwrap();
        assert!((full.model.tau1 - 2.8).abs() < 0.1, "{:?}", full.model);
    }

    #[test]
    fn absent_second_component_fits_to_zero() {
        let det = DetectorModel::default();
        let h = simulate_stream(&EmissionMix::single(2.8), &det, &acq(3e5, &det), 12).unwrap();
        let f = fit_lifetime(&h, &LifetimeOptions { fix_tau2: false, window: FitWindow::Full, ..Default::default() }).unwrap();
        assert!(f.model.a2 <= 2.0 * f.errors.a2 + 1e-9, "{:?} {:?}", f.model, f.errors);
    }

    #[test]
    fn fitted_tail_is_log_linear() {
        let det = DetectorModel::default();
        let mix = EmissionMix::single(2.8).with_backscatter(5.0);
        let h = simulate_stream(&mix, &det, &acq(1e6, &det), 13).unwrap();
        let f = fit_lifetime(&h, &LifetimeOptions::default()).unwrap();
        let m = BiexpDecay::from_ps(h.irf_fwhm_ps);
        let p = DecayModel { baseline: 0.0, ..f.model }.to_params();
        let (t1, t2) = (f.model.t0 + 8.0, f.model.t0 + 20.0);
        let slope = (m.eval(t2, &p).ln() - m.eval(t1, &p).ln()) / (t2 - t1);
        assert!((slope * f.model.tau1 + 1.0).abs() < 1e-3, "{slope}");
    }

    #[test]
    fn lifetime_error_shrinks_with_counts() {
        let det = DetectorModel::default();
        let mut errs = Vec::new();
        for n in [1e4, 1e5, 1e6] {
            let h = simulate_stream(&EmissionMix::single(2.8), &det, &acq(n, &det), 20).unwrap();
            let f = fit_lifetime(&h, &LifetimeOptions { single: true, ..Default::default() }).unwrap();
            assert!((f.model.tau1 / 2.8 - 1.0).abs() < 0.02 + 3.0 * f.errors.tau1 / 2.8, "{n} {:?}", f.model);
            errs.push(f.errors.tau1);
        }
        for w in errs.windows(2) {
            assert!((w[0] / w[1] / 10f64.sqrt() - 1.0).abs() < 0.2, "{errs:?}");
        }
    }
}
