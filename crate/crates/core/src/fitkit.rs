//! Bounded Levenberg-Marquardt least squares and the two model families fit
//! to measured data: Lorentzian sums (spectra) and biexponential decays
//! convolved with a Gaussian instrument response (lifetimes).

use std::f64::consts::{PI, SQRT_2};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("parameter vectors disagree: {0}")]
    Shape(String),
    #[error("non-finite or non-positive input: {0}")]
    BadData(String),
    #[error("initial parameter {index} = {value} outside [{lo}, {hi}]")]
    OutOfBounds { index: usize, value: f64, lo: f64, hi: f64 },
    #[error("{points} data points for {free} free parameters")]
    Underdetermined { points: usize, free: usize },
}

/// A model `y = f(x; p)` with an analytic Jacobian.
pub trait Model: Sync {
    fn n_params(&self) -> usize;

    /// Writes `df/dp` into `jac` and returns `f`.
    fn eval_jac(&self, x: f64, p: &[f64], jac: &mut [f64]) -> f64;

    fn eval(&self, x: f64, p: &[f64]) -> f64 {
        let mut j = vec![0.0; self.n_params()];
        self.eval_jac(x, p, &mut j)
    }
}

/// `y = p[0] * x`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Linear;

impl Model for Linear {
    fn n_params(&self) -> usize {
        1
    }
    fn eval_jac(&self, x: f64, p: &[f64], jac: &mut [f64]) -> f64 {
        jac[0] = x;
        p[0] * x
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LorentzianPeak {
    pub area: f64,
    pub center: f64,
    pub fwhm: f64,
}

impl LorentzianPeak {
    pub fn new(area: f64, center: f64, fwhm: f64) -> Self {
        Self { area, center, fwhm }
    }

    pub fn value(&self, x: f64) -> f64 {
        let d = 2.0 * (x - self.center) / self.fwhm;
        2.0 * self.area / (PI * self.fwhm * (1.0 + d * d))
    }

    pub fn peak_height(&self) -> f64 {
        2.0 * self.area / (PI * self.fwhm)
    }
}

pub fn eval_lorentzian_sum(peaks: &[LorentzianPeak], grid: &[f64]) -> Vec<f64> {
    grid.iter().map(|&x| peaks.iter().map(|p| p.value(x)).sum()).collect()
}

/// Sum of `n_peaks` Lorentzians, parameters `[A, x0, fwhm]` per peak,
/// optionally followed by a constant offset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LorentzianSum {
    pub n_peaks: usize,
    pub offset: bool,
}

impl LorentzianSum {
    pub fn pack(peaks: &[LorentzianPeak], offset: Option<f64>) -> Vec<f64> {
        let mut p: Vec<f64> = peaks.iter().flat_map(|k| [k.area, k.center, k.fwhm]).collect();
        p.extend(offset);
        p
    }

    pub fn unpack(&self, p: &[f64]) -> Vec<LorentzianPeak> {
        (0..self.n_peaks).map(|i| LorentzianPeak::new(p[3 * i], p[3 * i + 1], p[3 * i + 2])).collect()
    }
}

impl Model for LorentzianSum {
    fn n_params(&self) -> usize {
        3 * self.n_peaks + usize::from(self.offset)
    }

    fn eval_jac(&self, x: f64, p: &[f64], jac: &mut [f64]) -> f64 {
        let mut f = 0.0;
        for i in 0..self.n_peaks {
            let (a, x0, g) = (p[3 * i], p[3 * i + 1], p[3 * i + 2]);
            let d = x - x0;
            let q = 4.0 * d * d / (g * g);
            let den = 1.0 + q;
            let unit = 2.0 / (PI * g * den);
            f += a * unit;
            jac[3 * i] = unit;
            jac[3 * i + 1] = a * unit * 8.0 * d / (g * g * den);
            jac[3 * i + 2] = -a * unit * (1.0 - q) / (g * den);
        }
        if self.offset {
            let b = p[3 * self.n_peaks];
            jac[3 * self.n_peaks] = 1.0;
            f += b;
        }
        f
    }
}

/// `exp(z^2) erfc(z)` for `z >= 0`.
pub fn erfcx(z: f64) -> f64 {
    if z < 5.0 {
        return (z * z).exp() * libm::erfc(z);
    }
    // continued fraction: 1/sqrt(pi) / (z + (1/2)/(z + 1/(z + (3/2)/(z + ...))))
    let mut t = z;
    for n in (1..=60).rev() {
        t = z + 0.5 * n as f64 / t;
    }
    1.0 / (PI.sqrt() * t)
}

fn normal_pdf(u: f64) -> f64 {
    (-0.5 * u * u).exp() / (2.0 * PI).sqrt()
}

/// One decaying exponential `exp(-(t - t0)/tau)` switched on at `t0`,
/// convolved with a unit-area Gaussian of standard deviation `sigma`.
/// Returns the value and its derivatives with respect to `tau` and `t0`.
fn emg(t: f64, tau: f64, t0: f64, sigma: f64) -> (f64, f64, f64) {
    if sigma <= 0.0 {
        if t < t0 {
            return (0.0, 0.0, 0.0);
        }
        let g = (-(t - t0) / tau).exp();
        return (g, g * (t - t0) / (tau * tau), g / tau);
    }
    let u = (t - t0) / sigma;
    let s = sigma / tau;
    let z = (s - u) / SQRT_2;
    let g = if z >= 0.0 {
        0.5 * (-0.5 * u * u).exp() * erfcx(z)
    } else {
        0.5 * (0.5 * s * s - u * s).exp() * libm::erfc(z)
    };
    let pdf = normal_pdf(u);
    let dg_ds = g * (s - u) - pdf;
    let dg_du = pdf - s * g;
    (g, -(s / tau) * dg_ds, -dg_du / sigma)
}

/// Gaussian sigma for a full width at half maximum.
pub fn fwhm_to_sigma(fwhm: f64) -> f64 {
    fwhm / (8.0 * std::f64::consts::LN_2).sqrt()
}

/// Biexponential decay. Times in ns, amplitudes and baseline in counts/bin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayModel {
    pub a1: f64,
    pub tau1: f64,
    pub a2: f64,
    pub tau2: f64,
    pub baseline: f64,
    pub t0: f64,
}

impl DecayModel {
    pub fn single(a1: f64, tau1: f64, t0: f64) -> Self {
        Self { a1, tau1, a2: 0.0, tau2: 1.0, baseline: 0.0, t0 }
    }

    pub fn to_params(&self) -> Vec<f64> {
        vec![self.a1, self.tau1, self.a2, self.tau2, self.baseline, self.t0]
    }

    pub fn from_params(p: &[f64]) -> Self {
        Self { a1: p[0], tau1: p[1], a2: p[2], tau2: p[3], baseline: p[4], t0: p[5] }
    }
}

/// Parameters `[A1, tau1, A2, tau2, b, t0]`. The baseline is constant over
/// the whole window; the exponentials start at `t0` and are convolved with
/// the instrument response analytically.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BiexpDecay {
    pub irf_fwhm_ns: f64,
}

impl BiexpDecay {
    pub fn from_ps(irf_fwhm_ps: f64) -> Self {
        Self { irf_fwhm_ns: irf_fwhm_ps * 1e-3 }
    }
}

impl Model for BiexpDecay {
    fn n_params(&self) -> usize {
        6
    }

    fn eval_jac(&self, t: f64, p: &[f64], jac: &mut [f64]) -> f64 {
        let sigma = fwhm_to_sigma(self.irf_fwhm_ns);
        let (g1, d1_tau, d1_t0) = emg(t, p[1], p[5], sigma);
        let (g2, d2_tau, d2_t0) = emg(t, p[3], p[5], sigma);
        jac[0] = g1;
        jac[1] = p[0] * d1_tau;
        jac[2] = g2;
        jac[3] = p[2] * d2_tau;
        jac[4] = 1.0;
        jac[5] = p[0] * d1_t0 + p[2] * d2_t0;
        p[0] * g1 + p[2] * g2 + p[4]
    }
}

/// Decay curve on a time grid in ns; `irf_fwhm_ps` of zero disables the
/// instrument response.
pub fn eval_decay(model: &DecayModel, t: &[f64], irf_fwhm_ps: f64) -> Vec<f64> {
    let m = BiexpDecay::from_ps(irf_fwhm_ps);
    let p = model.to_params();
    t.iter().map(|&x| m.eval(x, &p)).collect()
}

/// Counting-statistics uncertainty `sqrt(max(y, 1))`.
pub fn poisson_sigma(y: &[f64]) -> Vec<f64> {
    y.iter().map(|&v| v.max(1.0).sqrt()).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmConfig {
    pub max_iterations: usize,
    /// Stop when every free parameter moves, or the undamped step from the
    /// new point would move it, by less than this, relative.
    pub xtol: f64,
    /// Stop when an accepted step lowers chi-square by less than this, relative.
    pub ftol: f64,
    pub initial_damping: f64,
    pub damping_up: f64,
    pub damping_down: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self { max_iterations: 200, xtol: 1e-8, ftol: 1e-14, initial_damping: 1e-4, damping_up: 10.0, damping_down: 10.0 }
    }
}

pub struct FitProblem<'a, M: Model> {
    pub model: &'a M,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub sigma: Vec<f64>,
    pub initial: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub fixed: Vec<bool>,
    pub config: LmConfig,
}

impl<'a, M: Model> FitProblem<'a, M> {
    /// Unbounded, nothing fixed, Poisson weights.
    pub fn new(model: &'a M, x: Vec<f64>, y: Vec<f64>, initial: Vec<f64>) -> Self {
        let n = initial.len();
        let sigma = poisson_sigma(&y);
        Self {
            model,
            x,
            y,
            sigma,
            initial,
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
            fixed: vec![false; n],
            config: LmConfig::default(),
        }
    }

    pub fn with_sigma(mut self, sigma: Vec<f64>) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn with_bounds(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    pub fn fix(mut self, index: usize) -> Self {
        self.fixed[index] = true;
        self
    }

    pub fn with_config(mut self, config: LmConfig) -> Self {
        self.config = config;
        self
    }

    fn validate(&self) -> Result<(), FitError> {
        let n = self.model.n_params();
        for (name, len) in [("initial", self.initial.len()), ("lower", self.lower.len()), ("upper", self.upper.len()), ("fixed", self.fixed.len())] {
            if len != n {
                return Err(FitError::Shape(format!("{name} has {len} entries, model has {n}")));
            }
        }
        if self.x.len() != self.y.len() || self.x.len() != self.sigma.len() {
            return Err(FitError::Shape("x, y and sigma lengths differ".into()));
        }
        if self.x.iter().chain(&self.y).any(|v| !v.is_finite()) {
            return Err(FitError::BadData("data must be finite".into()));
        }
        if self.sigma.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(FitError::BadData("sigma must be positive".into()));
        }
        for i in 0..n {
            let (v, lo, hi) = (self.initial[i], self.lower[i], self.upper[i]);
            if !v.is_finite() || v < lo || v > hi {
                return Err(FitError::OutOfBounds { index: i, value: v, lo, hi });
            }
        }
        let free = self.fixed.iter().filter(|f| !**f).count();
        if self.x.len() < free {
            return Err(FitError::Underdetermined { points: self.x.len(), free });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum FitStatus {
    ParameterTolerance,
    ChiSquareTolerance,
    /// Damping grew without finding a lower chi-square; the gradient is at
    /// round-off level.
    AtMinimum,
    /// Damping grew without progress while the gradient is not small.
    Stalled,
    MaxIterations,
    /// Normal equations could not be factorized.
    Singular { detail: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub params: Vec<f64>,
    /// Inverse of the weighted normal matrix over the free parameters; rows
    /// and columns of fixed parameters are zero.
    pub covariance: DMatrix<f64>,
    pub chi2: f64,
    pub reduced_chi2: f64,
    pub converged: bool,
    pub iterations: usize,
    pub status: FitStatus,
    /// Chi-square after the initial point and after each accepted step.
    pub history: Vec<f64>,
}

impl FitResult {
    pub fn stderr(&self, i: usize) -> f64 {
        self.covariance[(i, i)].max(0.0).sqrt()
    }
}

struct Linearization {
    chi2: f64,
    jtj: DMatrix<f64>,
    jtr: DVector<f64>,
}

fn chi2<M: Model>(pr: &FitProblem<M>, p: &[f64]) -> f64 {
    let mut jac = vec![0.0; p.len()];
    pr.x.iter()
        .zip(&pr.y)
        .zip(&pr.sigma)
        .map(|((&x, &y), &s)| {
            let r = (y - pr.model.eval_jac(x, p, &mut jac)) / s;
            r * r
        })
        .sum()
}

fn linearize<M: Model>(pr: &FitProblem<M>, p: &[f64], free: &[usize]) -> Linearization {
    let nf = free.len();
    let mut jac = vec![0.0; p.len()];
    let mut jtj = DMatrix::zeros(nf, nf);
    let mut jtr = DVector::zeros(nf);
    let mut chi2 = 0.0;
    let mut row = vec![0.0; nf];
    for ((&x, &y), &s) in pr.x.iter().zip(&pr.y).zip(&pr.sigma) {
        let f = pr.model.eval_jac(x, p, &mut jac);
        let r = (y - f) / s;
        chi2 += r * r;
        for (k, &i) in free.iter().enumerate() {
            row[k] = jac[i] / s;
        }
        for a in 0..nf {
            jtr[a] += row[a] * r;
            for b in 0..=a {
                jtj[(a, b)] += row[a] * row[b];
            }
        }
    }
    for a in 0..nf {
        for b in 0..a {
            jtj[(b, a)] = jtj[(a, b)];
        }
    }
    Linearization { chi2, jtj, jtr }
}

fn covariance(jtj: &DMatrix<f64>, free: &[usize], n: usize) -> Option<DMatrix<f64>> {
    let inv = jtj.clone().cholesky()?.inverse();
    let mut cov = DMatrix::zeros(n, n);
    for (a, &i) in free.iter().enumerate() {
        for (b, &j) in free.iter().enumerate() {
            cov[(i, j)] = inv[(a, b)];
        }
    }
    Some(cov)
}

/// Free-parameter slots not pinned at a bound by the descent direction.
fn unblocked<M: Model>(pr: &FitProblem<M>, p: &[f64], free: &[usize], lin: &Linearization) -> Vec<usize> {
    (0..free.len())
        .filter(|&k| {
            let i = free[k];
            !((p[i] <= pr.lower[i] && lin.jtr[k] < 0.0) || (p[i] >= pr.upper[i] && lin.jtr[k] > 0.0))
        })
        .collect()
}

/// Damped step over the `open` slots; blocked slots get zero.
fn solve_step(lin: &Linearization, lambda: f64, open: &[usize]) -> Option<DVector<f64>> {
    let m = open.len();
    let mut a = DMatrix::zeros(m, m);
    let mut g = DVector::zeros(m);
    for (x, &k) in open.iter().enumerate() {
        g[x] = lin.jtr[k];
        for (y, &l) in open.iter().enumerate() {
            a[(x, y)] = lin.jtj[(k, l)];
        }
        a[(x, x)] *= 1.0 + lambda;
    }
    let d = a.cholesky()?.solve(&g);
    let mut step = DVector::zeros(lin.jtr.len());
    for (x, &k) in open.iter().enumerate() {
        step[k] = d[x];
    }
    Some(step)
}

fn apply_step<M: Model>(pr: &FitProblem<M>, p: &[f64], free: &[usize], step: &DVector<f64>) -> Vec<f64> {
    let mut t = p.to_vec();
    for (k, &i) in free.iter().enumerate() {
        t[i] = (p[i] + step[k]).clamp(pr.lower[i], pr.upper[i]);
    }
    t
}

/// Largest move of a free parameter relative to its magnitude, or to its
/// curvature scale when the parameter is near zero.
fn relative_change(lin: &Linearization, free: &[usize], p: &[f64], t: &[f64]) -> f64 {
    free.iter()
        .enumerate()
        .map(|(k, &i)| {
            let d = lin.jtj[(k, k)];
            let floor = if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 };
            (t[i] - p[i]).abs() / (p[i].abs().max(floor) + 1e-300)
        })
        .fold(0.0, f64::max)
}

/// Minimizes the weighted sum of squares with Marquardt-scaled damping.
/// Trial points are projected onto the bounds. Fixed parameters are never
/// touched.
pub fn lm_fit<M: Model>(problem: &FitProblem<M>) -> Result<FitResult, FitError> {
    problem.validate()?;
    let cfg = &problem.config;
    let n = problem.initial.len();
    let free: Vec<usize> = (0..n).filter(|&i| !problem.fixed[i]).collect();
    let dof = (problem.x.len() - free.len()).max(1) as f64;
    let mut p = problem.initial.clone();
    let mut lin = linearize(problem, &p, &free);
    let mut history = vec![lin.chi2];
    let mut lambda = cfg.initial_damping;
    let mut iterations = 0;

    let finish = |p: Vec<f64>, lin: &Linearization, it: usize, status: FitStatus, history: Vec<f64>| {
        let cov = covariance(&lin.jtj, &free, n);
        let (status, converged) = match (status, cov.is_some()) {
            (s @ (FitStatus::ParameterTolerance | FitStatus::ChiSquareTolerance | FitStatus::AtMinimum), true) => (s, true),
            (FitStatus::Singular { detail }, _) => (FitStatus::Singular { detail }, false),
            (s, true) => (s, false),
            (_, false) => (FitStatus::Singular { detail: "normal matrix is not positive definite at the solution".into() }, false),
        };
        FitResult {
            params: p,
            covariance: cov.unwrap_or_else(|| DMatrix::from_element(n, n, f64::NAN)),
            chi2: lin.chi2,
            reduced_chi2: lin.chi2 / dof,
            converged,
            iterations: it,
            status,
            history,
        }
    };

    if free.is_empty() {
        return Ok(finish(p, &lin, 0, FitStatus::ParameterTolerance, history));
    }
    if let Some(k) = (0..free.len()).find(|&k| !(lin.jtj[(k, k)] > 0.0)) {
        let detail = format!("parameter {} has no influence on the model", free[k]);
        return Ok(finish(p, &lin, 0, FitStatus::Singular { detail }, history));
    }

    while iterations < cfg.max_iterations {
        iterations += 1;
        let open = unblocked(problem, &p, &free, &lin);
        let mut accepted = None;
        while lambda < 1e16 {
            let Some(step) = solve_step(&lin, lambda, &open) else {
                lambda *= cfg.damping_up;
                continue;
            };
            let trial = apply_step(problem, &p, &free, &step);
            let c = chi2(problem, &trial);
            if c.is_finite() && c < lin.chi2 {
                accepted = Some((trial, c));
                lambda = (lambda / cfg.damping_down).max(1e-12);
                break;
            }
            lambda *= cfg.damping_up;
        }
        let Some((trial, c)) = accepted else {
            let grad = open.iter().map(|&k| lin.jtr[k].abs()).fold(0.0, f64::max);
            let scale = lin.jtj.diagonal().iter().map(|d| d.sqrt()).fold(0.0, f64::max);
            let status = if grad <= 1e-7 * scale * (lin.chi2.sqrt() + 1.0) { FitStatus::AtMinimum } else { FitStatus::Stalled };
            return Ok(finish(p, &lin, iterations, status, history));
        };
        let dx = relative_change(&lin, &free, &p, &trial);
        let df = (lin.chi2 - c) / lin.chi2.max(1e-300);
        p = trial;
        lin = linearize(problem, &p, &free);
        history.push(lin.chi2);
        // size of the undamped step from the new point
        let open = unblocked(problem, &p, &free, &lin);
        let next = solve_step(&lin, 0.0, &open).map(|d| apply_step(problem, &p, &free, &d));
        let predicted = next.as_ref().map_or(f64::INFINITY, |t| relative_change(&lin, &free, &p, t));
        if predicted < cfg.xtol {
            let t = next.expect("predicted step exists");
            if chi2(problem, &t) <= lin.chi2 {
                p = t;
                lin = linearize(problem, &p, &free);
                history.push(lin.chi2);
            }
        }
        if dx < cfg.xtol || predicted < cfg.xtol {
            return Ok(finish(p, &lin, iterations, FitStatus::ParameterTolerance, history));
        }
        if df < cfg.ftol || lin.chi2 == 0.0 {
            return Ok(finish(p, &lin, iterations, FitStatus::ChiSquareTolerance, history));
        }
    }
    Ok(finish(p, &lin, iterations, FitStatus::MaxIterations, history))
}
