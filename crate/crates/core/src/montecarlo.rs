//! Ensembles of independent runs and the empirical checks built on them.
//!
//! Run `k` of an ensemble uses the streams keyed by `(master_seed, k)`, and
//! results are gathered in run order, so a summary does not depend on the
//! number of worker threads.

use rayon::prelude::*;
use serde::Serialize;

use crate::asymptotics::{covariance_report, s_gamma};
use crate::error::{Error, Result};
use crate::inference::{chi2_tail, ci_z_infinity, test_statistic_with, ConfidenceInterval};
use crate::linalg::Matrix;
use crate::model::{HierarchicalNetwork, StepSizeSchedule};
use crate::simulate::{advance_to, spread, InitialSpec, ProcessState};
use crate::spectral::{build_sim_network, classify_regime, Regime, SpectralDecomposition};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Thresholds {
    /// Width of the two boundary bins.
    pub boundary_eps: f64,
    /// Distance from 0 or 1 counted as sitting on the boundary.
    pub exact_boundary: f64,
    /// Minimum `Z~(1 - Z~)` for a run to enter normalized statistics.
    pub degeneracy: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { boundary_eps: 0.05, exact_boundary: 1e-9, degeneracy: 0.01 }
    }
}

#[derive(Clone, Debug)]
pub struct EnsembleConfig {
    pub network: HierarchicalNetwork<f64>,
    pub schedule: StepSizeSchedule<f64>,
    pub init: InitialSpec<f64>,
    pub horizon: u64,
    pub n_sims: usize,
    pub master_seed: u64,
    /// First run index; ensembles with disjoint ranges are independent.
    pub first_run: u64,
    pub thresholds: Thresholds,
}

impl EnsembleConfig {
    pub fn new(
        network: HierarchicalNetwork<f64>,
        schedule: StepSizeSchedule<f64>,
        init: InitialSpec<f64>,
        horizon: u64,
        n_sims: usize,
        master_seed: u64,
    ) -> Self {
        Self { network, schedule, init, horizon, n_sims, master_seed, first_run: 0, thresholds: Thresholds::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sims == 0 {
            return Err(Error::InvalidParameter("n_sims must be >= 1".into()));
        }
        if self.horizon == 0 {
            return Err(Error::ZeroHorizon);
        }
        let t = &self.thresholds;
        for (name, v) in [("boundary_eps", t.boundary_eps), ("exact_boundary", t.exact_boundary), ("degeneracy", t.degeneracy)] {
            if !(v > 0.0 && v < 0.5) {
                return Err(Error::InvalidParameter(format!("threshold {name} = {v} outside (0, 1/2)")));
            }
        }
        self.init.validate(self.network.n_agents())
    }

    fn run_indices(&self) -> std::ops::Range<u64> {
        self.first_run..self.first_run + self.n_sims as u64
    }
}

/// Final state of one run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunFinal {
    pub run_index: u64,
    pub z: Vec<f64>,
    pub ncnt: Vec<f64>,
}

fn run_one(cfg: &EnsembleConfig, run_index: u64, horizon: u64) -> Result<ProcessState<f64>> {
    let mut state = ProcessState::new(&cfg.init, cfg.master_seed, run_index)?;
    advance_to(&mut state, &cfg.network, &cfg.schedule, horizon)?;
    Ok(state)
}

/// Values of each run at several horizons, in run order.
fn run_checkpoints(cfg: &EnsembleConfig, horizons: &[u64]) -> Result<Vec<Vec<RunFinal>>> {
    cfg.validate()?;
    cfg.run_indices()
        .into_par_iter()
        .map(|k| {
            let mut state = ProcessState::new(&cfg.init, cfg.master_seed, k)?;
            let mut out = Vec::with_capacity(horizons.len());
            for &h in horizons {
                advance_to(&mut state, &cfg.network, &cfg.schedule, h)?;
                out.push(RunFinal { run_index: k, z: state.z().to_vec(), ncnt: state.ncnt().to_vec() });
            }
            Ok(out)
        })
        .collect()
}

/// Runs every member of the ensemble to the horizon.
pub fn run_finals(cfg: &EnsembleConfig) -> Result<Vec<RunFinal>> {
    cfg.validate()?;
    cfg.run_indices()
        .into_par_iter()
        .map(|k| {
            let s = run_one(cfg, k, cfg.horizon)?;
            Ok(RunFinal { run_index: k, z: s.z().to_vec(), ncnt: s.ncnt().to_vec() })
        })
        .collect()
}

/// Shares of pooled values in `[0, eps]`, `(eps, 1 - eps)`, `[1 - eps, 1]`
/// and within `exact_boundary` of `{0, 1}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Proportions {
    pub low: f64,
    pub mid: f64,
    pub high: f64,
    pub boundary: f64,
    pub count: usize,
}

impl Proportions {
    pub fn from_values(values: &[f64], t: &Thresholds) -> Self {
        let eps = t.boundary_eps;
        let (mut lo, mut mid, mut hi, mut bd) = (0usize, 0usize, 0usize, 0usize);
        for &v in values {
            if v <= eps {
                lo += 1;
            } else if v < 1.0 - eps {
                mid += 1;
            } else {
                hi += 1;
            }
            if v <= t.exact_boundary || v >= 1.0 - t.exact_boundary {
                bd += 1;
            }
        }
        let n = values.len().max(1) as f64;
        Self { low: lo as f64 / n, mid: mid as f64 / n, high: hi as f64 / n, boundary: bd as f64 / n, count: values.len() }
    }

    /// Binomial standard error of a share `p`.
    pub fn standard_error(&self, p: f64) -> f64 {
        (p * (1.0 - p) / self.count.max(1) as f64).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnsembleSummary {
    pub n_sims: usize,
    pub n_agents: usize,
    pub horizon: u64,
    pub master_seed: u64,
    pub finals: Vec<RunFinal>,
    /// Over all agents of all runs.
    pub proportions: Proportions,
    pub spreads: Vec<f64>,
    /// `Z~` of each run when spectral data is supplied, agent mean otherwise.
    pub z_tilde: Vec<f64>,
    pub histogram: Histogram,
    pub bandwidth: f64,
}

impl EnsembleSummary {
    /// Final inclinations of every agent of every run, run-major.
    pub fn pooled(&self) -> Vec<f64> {
        self.finals.iter().flat_map(|f| f.z.iter().copied()).collect()
    }

    pub fn agent(&self, j: usize) -> Vec<f64> {
        self.finals.iter().map(|f| f.z[j]).collect()
    }

    /// Runs with `Z~(1 - Z~)` at least the degeneracy threshold.
    pub fn non_degenerate(&self, t: &Thresholds) -> usize {
        self.z_tilde.iter().filter(|&&z| z * (1.0 - z) >= t.degeneracy).count()
    }
}

pub fn run_ensemble(cfg: &EnsembleConfig, spectral: Option<&SpectralDecomposition<f64>>) -> Result<EnsembleSummary> {
    let finals = run_finals(cfg)?;
    summarize(cfg, spectral, finals)
}

fn summarize(
    cfg: &EnsembleConfig,
    spectral: Option<&SpectralDecomposition<f64>>,
    finals: Vec<RunFinal>,
) -> Result<EnsembleSummary> {
    let n_agents = cfg.network.n_agents();
    let pooled: Vec<f64> = finals.iter().flat_map(|f| f.z.iter().copied()).collect();
    let z_tilde = finals
        .iter()
        .map(|f| match spectral {
            Some(s) => s.z_tilde(&f.z),
            None => f.z.iter().sum::<f64>() / n_agents as f64,
        })
        .collect();
    Ok(EnsembleSummary {
        n_sims: cfg.n_sims,
        n_agents,
        horizon: cfg.horizon,
        master_seed: cfg.master_seed,
        proportions: Proportions::from_values(&pooled, &cfg.thresholds),
        spreads: finals.iter().map(|f| spread(&f.z)).collect(),
        z_tilde,
        histogram: Histogram::new(&pooled, 50),
        bandwidth: silverman_bandwidth(&pooled),
        finals,
    })
}

/// One row of the polarization table, in percent.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Table1Row {
    pub alpha: f64,
    pub z0_label: String,
    pub bin_low: f64,
    pub bin_mid: f64,
    pub bin_high: f64,
    pub boundary: f64,
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub alpha: f64,
    pub beta: f64,
    pub label: String,
    pub init: InitialSpec<f64>,
}

impl Scenario {
    /// File-name friendly label.
    pub fn slug(&self) -> String {
        let body: String = self
            .label
            .chars()
            .filter_map(|ch| match ch {
                '(' | ')' => None,
                ',' => Some('_'),
                '.' => Some('p'),
                c => Some(c),
            })
            .collect();
        format!("a{}_{}", self.alpha.to_string().replace('.', "p"), body)
    }
}

/// The twelve scenarios: `alpha` in `{0.8, 0.2}`, `beta = 0.5`, leading
/// start `(0.5, 0.5)`, `(0.1, 0.5)` or uniform, downstream start all zeros or
/// all ones.
pub fn table1_scenarios() -> Vec<Scenario> {
    let leads: [(&str, [Option<f64>; 2]); 3] =
        [("0.5,0.5", [Some(0.5), Some(0.5)]), ("0.1,0.5", [Some(0.1), Some(0.5)]), ("U1,U2", [None, None])];
    let mut out = Vec::new();
    for alpha in [0.8, 0.2] {
        for (lab, lead) in &leads {
            for down in [0.0, 1.0] {
                let mut e = lead.to_vec();
                e.extend([Some(down), Some(down)]);
                out.push(Scenario {
                    alpha,
                    beta: 0.5,
                    label: format!("({lab},{d},{d})", d = down as u8),
                    init: InitialSpec::from_entries(e),
                });
            }
        }
    }
    out
}

/// Schedule of the simulation study: `gamma = 0.9`, `c = 1`.
pub fn table1_schedule() -> StepSizeSchedule<f64> {
    StepSizeSchedule::with_default_clip(0.9, 1.0).expect("valid schedule")
}

/// Runs every scenario with the same seed; paired rows therefore share the
/// leading-group paths exactly.
pub fn table1(scenarios: &[Scenario], n_sims: usize, horizon: u64, master_seed: u64) -> Result<Vec<(Table1Row, EnsembleSummary)>> {
    scenarios
        .iter()
        .map(|sc| {
            let (net, spec) = build_sim_network::<f64>(sc.alpha, sc.beta)?;
            let cfg = EnsembleConfig::new(net, table1_schedule(), sc.init.clone(), horizon, n_sims, master_seed);
            let s = run_ensemble(&cfg, Some(&spec))?;
            let p = s.proportions;
            let row = Table1Row {
                alpha: sc.alpha,
                z0_label: sc.label.clone(),
                bin_low: 100.0 * p.low,
                bin_mid: 100.0 * p.mid,
                bin_high: 100.0 * p.high,
                boundary: 100.0 * p.boundary,
            };
            Ok((row, s))
        })
        .collect()
}

/// Printed values `(bin_low, bin_mid, bin_high, boundary)` of the reference
/// table, in the order of [`table1_scenarios`].
pub const TABLE1_REFERENCE: [[f64; 4]; 12] = [
    [27.89, 44.77, 27.34, 38.31],
    [28.47, 44.58, 26.95, 38.20],
    [50.23, 39.31, 10.46, 49.38],
    [49.66, 40.20, 10.14, 38.81],
    [28.20, 42.01, 29.79, 42.87],
    [29.96, 40.09, 29.95, 43.86],
    [28.42, 44.00, 27.58, 38.19],
    [28.09, 44.46, 27.45, 38.10],
    [50.49, 40.27, 9.24, 48.43],
    [50.37, 39.39, 10.24, 38.87],
    [30.21, 39.29, 30.50, 44.08],
    [30.50, 39.48, 30.02, 43.98],
];

/// Equal-width histogram on `[0, 1]`, normalized to a density.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub density: Vec<f64>,
}

impl Histogram {
    pub fn new(values: &[f64], bins: usize) -> Self {
        let bins = bins.max(1);
        let mut counts = vec![0usize; bins];
        for &v in values {
            let k = ((v.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
            counts[k] += 1;
        }
        let total = values.len().max(1) as f64;
        let width = 1.0 / bins as f64;
        Self {
            edges: (0..=bins).map(|k| k as f64 * width).collect(),
            density: counts.iter().map(|&c| c as f64 / (total * width)).collect(),
        }
    }

    /// `integral |f - g|` for histograms on the same bins.
    pub fn l1_distance(&self, other: &Histogram) -> f64 {
        let width = 1.0 / self.density.len() as f64;
        self.density.iter().zip(&other.density).map(|(a, b)| (a - b).abs() * width).sum()
    }

    /// Largest gap between the two cumulative distributions at the bin
    /// edges. Unlike the sample KS distance it ignores how mass is arranged
    /// inside a bin, e.g. exact zeros against values of order `1e-12`.
    pub fn ks_distance(&self, other: &Histogram) -> f64 {
        let width = 1.0 / self.density.len() as f64;
        let (mut fa, mut fb, mut d) = (0.0, 0.0, 0.0f64);
        for (a, b) in self.density.iter().zip(&other.density) {
            fa += a * width;
            fb += b * width;
            d = d.max((fa - fb).abs());
        }
        d
    }
}

/// `0.9 min(sd, IQR / 1.34) n^{-1/5}`, falling back to `sd` or a small
/// positive width when the spread statistics vanish.
pub fn silverman_bandwidth(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.05;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let a = match (sd > 0.0, iqr > 0.0) {
        (true, true) => sd.min(iqr / 1.34),
        (true, false) => sd,
        (false, true) => iqr / 1.34,
        (false, false) => return 1e-3,
    };
    0.9 * a * (n as f64).powf(-0.2)
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    } else {
        sorted[i]
    }
}

/// Gaussian kernel estimate on `[0, 1]` with reflection at both ends.
pub fn reflected_kde(values: &[f64], bandwidth: f64, grid: &[f64]) -> Vec<f64> {
    let h = bandwidth;
    let norm = 1.0 / (values.len().max(1) as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let k = |u: f64| (-0.5 * u * u).exp();
    grid.par_iter()
        .map(|&x| {
            let s: f64 = values
                .iter()
                .map(|&v| k((x - v) / h) + k((x + v) / h) + k((x - (2.0 - v)) / h))
                .sum();
            s * norm
        })
        .collect()
}

/// Two-sample Kolmogorov-Smirnov distance.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

/// One-sample KS distance against a continuous cdf.
pub fn ks_one_sample(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut x = sample.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = cdf(v);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DensityReport {
    pub grid: Vec<f64>,
    pub bandwidth: f64,
    pub pooled_kde: Vec<f64>,
    pub agent_kde: Vec<Vec<f64>>,
    pub pooled_histogram: Histogram,
    pub agent_histograms: Vec<Histogram>,
}

impl DensityReport {
    /// Largest L1 distance between two agents' histograms.
    pub fn max_agent_l1(&self) -> f64 {
        let h = &self.agent_histograms;
        let mut d = 0.0f64;
        for i in 0..h.len() {
            for j in i + 1..h.len() {
                d = d.max(h[i].l1_distance(&h[j]));
            }
        }
        d
    }

    /// CSV with columns `x, pooled_kde, kde_1.., ` on the evaluation grid.
    pub fn kde_csv(&self) -> String {
        let mut s = String::from("x,pooled");
        for j in 0..self.agent_kde.len() {
            s.push_str(&format!(",agent_{}", j + 1));
        }
        s.push('\n');
        for (i, x) in self.grid.iter().enumerate() {
            s.push_str(&format!("{x},{}", self.pooled_kde[i]));
            for a in &self.agent_kde {
                s.push_str(&format!(",{}", a[i]));
            }
            s.push('\n');
        }
        s
    }

    /// CSV with columns `bin_low, bin_high, pooled, agent_1..`.
    pub fn histogram_csv(&self) -> String {
        let mut s = String::from("bin_low,bin_high,pooled");
        for j in 0..self.agent_histograms.len() {
            s.push_str(&format!(",agent_{}", j + 1));
        }
        s.push('\n');
        let e = &self.pooled_histogram.edges;
        for k in 0..self.pooled_histogram.density.len() {
            s.push_str(&format!("{},{},{}", e[k], e[k + 1], self.pooled_histogram.density[k]));
            for h in &self.agent_histograms {
                s.push_str(&format!(",{}", h.density[k]));
            }
            s.push('\n');
        }
        s
    }
}

/// Histograms with `bins` bins and reflected kernel estimates on a
/// `grid_points` grid, per agent and pooled. One bandwidth, from the pooled
/// data, is used throughout.
pub fn density_report(summary: &EnsembleSummary, bins: usize, grid_points: usize) -> DensityReport {
    let pooled = summary.pooled();
    let bandwidth = silverman_bandwidth(&pooled);
    let grid: Vec<f64> = (0..grid_points.max(2)).map(|k| k as f64 / (grid_points.max(2) - 1) as f64).collect();
    let agents: Vec<Vec<f64>> = (0..summary.n_agents).map(|j| summary.agent(j)).collect();
    DensityReport {
        pooled_kde: reflected_kde(&pooled, bandwidth, &grid),
        agent_kde: agents.iter().map(|a| reflected_kde(a, bandwidth, &grid)).collect(),
        pooled_histogram: Histogram::new(&pooled, bins),
        agent_histograms: agents.iter().map(|a| Histogram::new(a, bins)).collect(),
        grid,
        bandwidth,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CltReport {
    pub regime: Regime,
    pub horizon: u64,
    pub runs: usize,
    pub runs_used: usize,
    pub mean_mixing: f64,
    /// Scaled covariance divided by the mean mixing proxy.
    pub empirical: Matrix<f64>,
    /// Mean of the per-run products each divided by that run's proxy.
    pub empirical_per_run: Matrix<f64>,
    pub theory: Matrix<f64>,
    /// Largest relative error over entries with `|theory| >= 0.1 max|theory|`.
    pub max_rel_error: f64,
    /// Largest empirical entry off the theory's nonzero pattern over the
    /// largest on it.
    pub pattern_ratio: f64,
}

/// Compares the empirical covariance of the regime-scaled centred state
/// across runs with the limiting covariance.
///
/// Subpolynomial: `n^{gamma/2} Z^` against `Sigma^_gamma`. Critical regimes:
/// the rescaled `(Z^, N^)` against the joint ZZ/ZN/NN blocks without the
/// `Sigma~` terms.
pub fn clt_check(cfg: &EnsembleConfig, spectral: &SpectralDecomposition<f64>, regime: Regime) -> Result<CltReport> {
    if !regime.is_supported() {
        return Err(Error::UnsupportedRegime(regime));
    }
    let found = classify_regime(cfg.schedule.gamma(), cfg.schedule.c(), spectral);
    if found != regime {
        return Err(Error::RegimeMismatch { expected: regime, found });
    }
    let n = spectral.n();
    let theory = match regime {
        Regime::Subpolynomial => s_gamma(spectral, cfg.schedule.gamma(), cfg.schedule.c())?.1,
        _ => {
            let rep = covariance_report(spectral, &cfg.schedule)?;
            let a = rep.blocks.agent.ok_or_else(|| Error::Covariance("missing blocks".into()))?;
            Matrix::from_fn(2 * n, 2 * n, |i, j| match (i < n, j < n) {
                (true, true) => a.zz[(i, j)],
                (true, false) => a.zn[(i, j - n)],
                (false, true) => a.zn[(j, i - n)],
                (false, false) => a.nn[(i - n, j - n)],
            })
        }
    };
    let finals = run_finals(cfg)?;
    let gamma = cfg.schedule.gamma();
    let mut vecs = Vec::new();
    let mut mixes = Vec::new();
    for f in &finals {
        let zt = spectral.z_tilde(&f.z);
        let mix = zt * (1.0 - zt);
        if mix < cfg.thresholds.degeneracy {
            continue;
        }
        let v = scaled_vector(regime, gamma, spectral, f, cfg.horizon, zt);
        vecs.push(v);
        mixes.push(mix);
    }
    let m = theory.rows();
    if vecs.is_empty() {
        return Ok(CltReport {
            regime,
            horizon: cfg.horizon,
            runs: finals.len(),
            runs_used: 0,
            mean_mixing: 0.0,
            empirical: Matrix::zeros(m, m),
            empirical_per_run: Matrix::zeros(m, m),
            max_rel_error: rel_error_dominant(&Matrix::zeros(m, m), &theory),
            pattern_ratio: 0.0,
            theory,
        });
    }
    let k = vecs.len() as f64;
    let mean_mix = mixes.iter().sum::<f64>() / k;
    let cov = sample_covariance(&vecs);
    let per_run = Matrix::from_fn(m, m, |i, j| vecs.iter().zip(&mixes).map(|(v, w)| v[i] * v[j] / w).sum::<f64>() / k);
    let empirical = cov.scale(1.0 / mean_mix);
    Ok(CltReport {
        regime,
        horizon: cfg.horizon,
        runs: finals.len(),
        runs_used: vecs.len(),
        mean_mixing: mean_mix,
        max_rel_error: rel_error_dominant(&empirical, &theory),
        pattern_ratio: pattern_ratio(&empirical, &theory),
        empirical,
        empirical_per_run: per_run,
        theory,
    })
}

/// Scaled vector whose covariance the regime predicts.
fn scaled_vector(regime: Regime, gamma: f64, spec: &SpectralDecomposition<f64>, f: &RunFinal, n: u64, zt: f64) -> Vec<f64> {
    let nf = n as f64;
    let zh = spec.z_hat(&f.z);
    let s = match regime {
        Regime::Subpolynomial => return zh.iter().map(|x| x * nf.powf(0.5 * gamma)).collect(),
        Regime::CriticalSubcritical => nf.sqrt(),
        _ => nf.sqrt() / nf.ln().powf(spec.rho() as f64 - 0.5),
    };
    zh.iter().copied().chain(f.ncnt.iter().map(|x| x - zt)).map(|x| x * s).collect()
}

/// Centred sample covariance, `1/(k-1)` normalization.
pub fn sample_covariance(vecs: &[Vec<f64>]) -> Matrix<f64> {
    let m = vecs.first().map_or(0, Vec::len);
    let k = vecs.len();
    if k < 2 {
        return Matrix::zeros(m, m);
    }
    let mean: Vec<f64> = (0..m).map(|i| vecs.iter().map(|v| v[i]).sum::<f64>() / k as f64).collect();
    Matrix::from_fn(m, m, |i, j| {
        vecs.iter().map(|v| (v[i] - mean[i]) * (v[j] - mean[j])).sum::<f64>() / (k - 1) as f64
    })
}

/// Largest `|emp - theory| / |theory|` over entries with
/// `|theory| >= 0.1 max |theory|`. Zero theory gives the absolute error.
pub fn rel_error_dominant(emp: &Matrix<f64>, theory: &Matrix<f64>) -> f64 {
    let top = theory.max_abs();
    if top == 0.0 {
        return emp.max_abs();
    }
    let mut e = 0.0f64;
    for i in 0..theory.rows() {
        for j in 0..theory.cols() {
            let t = theory[(i, j)];
            if t.abs() >= 0.1 * top {
                e = e.max((emp[(i, j)] - t).abs() / t.abs());
            }
        }
    }
    e
}

fn pattern_ratio(emp: &Matrix<f64>, theory: &Matrix<f64>) -> f64 {
    let top = theory.max_abs();
    let (mut on, mut off) = (0.0f64, 0.0f64);
    for i in 0..theory.rows() {
        for j in 0..theory.cols() {
            if theory[(i, j)].abs() > 1e-12 * top.max(1e-300) {
                on = on.max(emp[(i, j)].abs());
            } else {
                off = off.max(emp[(i, j)].abs());
            }
        }
    }
    if on > 0.0 {
        off / on
    } else {
        f64::INFINITY
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CouplingReport {
    pub runs: usize,
    pub steps: u64,
    pub identical: bool,
    /// `(run_index, step)` of the first leading-block difference.
    pub first_mismatch: Option<(u64, u64)>,
}

/// Steps two configurations side by side under shared `(seed, run_index)`
/// and compares the leading block of `Z` bit for bit after every step.
pub fn coupling_check(a: &EnsembleConfig, b: &EnsembleConfig) -> Result<CouplingReport> {
    a.validate()?;
    b.validate()?;
    if a.network.n_agents() != b.network.n_agents() {
        return Err(Error::DimensionMismatch { expected: a.network.n_agents(), found: b.network.n_agents() });
    }
    let lead = a.network.block_range(0);
    let horizon = a.horizon.min(b.horizon);
    let mismatches: Vec<Option<(u64, u64)>> = a
        .run_indices()
        .into_par_iter()
        .map(|k| -> Result<Option<(u64, u64)>> {
            let mut sa = ProcessState::new(&a.init, a.master_seed, k)?;
            let mut sb = ProcessState::new(&b.init, a.master_seed, k)?;
            let same = |x: &ProcessState<f64>, y: &ProcessState<f64>| {
                x.z()[lead.clone()].iter().zip(&y.z()[lead.clone()]).all(|(p, q)| p.to_bits() == q.to_bits())
            };
            if !same(&sa, &sb) {
                return Ok(Some((k, 0)));
            }
            for t in 1..=horizon {
                crate::simulate::step(&mut sa, &a.network, &a.schedule)?;
                crate::simulate::step(&mut sb, &b.network, &b.schedule)?;
                if !same(&sa, &sb) {
                    return Ok(Some((k, t)));
                }
            }
            Ok(None)
        })
        .collect::<Result<_>>()?;
    let first_mismatch = mismatches.into_iter().flatten().next();
    Ok(CouplingReport { runs: a.n_sims, steps: horizon, identical: first_mismatch.is_none(), first_mismatch })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CalibrationReport {
    pub regime: Regime,
    pub runs: usize,
    pub runs_used: usize,
    pub dof: usize,
    pub mean: f64,
    pub variance: f64,
    pub ks_distance: f64,
    pub level: f64,
    pub rejection_rate: f64,
    /// Wilson 95% interval for the rejection rate.
    pub rejection_ci: (f64, f64),
    pub statistics: Vec<f64>,
}

/// Distribution of the structure statistic over non-degenerate runs of
/// `cfg`, tested against `spectral0`. When `min_used` is set, further
/// batches of `cfg.n_sims` runs (continuing the run indices) are added until
/// that many non-degenerate runs are available, up to 50 batches.
pub fn calibration_run(
    cfg: &EnsembleConfig,
    spectral0: &SpectralDecomposition<f64>,
    regime: Regime,
    level: f64,
    min_used: Option<usize>,
) -> Result<CalibrationReport> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParameter(format!("level {level} outside (0, 1)")));
    }
    let mut stats = Vec::new();
    let mut dof = 0usize;
    let mut runs = 0usize;
    let mut batch = cfg.clone();
    for _ in 0..50 {
        let finals = run_finals(&batch)?;
        runs += finals.len();
        let outcomes: Vec<_> = finals
            .par_iter()
            .map(|f| test_statistic_with(&f.z, batch.horizon, &batch.schedule, spectral0, regime, batch.thresholds.degeneracy))
            .collect::<Result<_>>()?;
        for o in outcomes.into_iter().filter(|o| !o.degenerate) {
            dof = o.dof;
            stats.push(o.statistic);
        }
        match min_used {
            Some(m) if stats.len() < m => batch.first_run += batch.n_sims as u64,
            _ => break,
        }
    }
    if stats.is_empty() {
        return Err(Error::AllDegenerate);
    }
    if let Some(m) = min_used {
        stats.truncate(m.max(1));
    }
    let k = stats.len() as f64;
    let mean = stats.iter().sum::<f64>() / k;
    let variance = stats.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (k - 1.0).max(1.0);
    let cdf = |x: f64| 1.0 - chi2_tail(x.max(0.0), dof.max(1)).unwrap_or(1.0);
    let ks_distance = ks_one_sample(&stats, cdf);
    let crit = crate::inference::chi2_quantile(1.0 - level, dof.max(1))?;
    let rejections = stats.iter().filter(|&&t| t > crit).count();
    let rate = rejections as f64 / k;
    Ok(CalibrationReport {
        regime,
        runs,
        runs_used: stats.len(),
        dof,
        mean,
        variance,
        ks_distance,
        level,
        rejection_rate: rate,
        rejection_ci: wilson(rejections, stats.len()),
        statistics: stats,
    })
}

/// Wilson score interval at 95%.
pub fn wilson(successes: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054;
    let nf = n as f64;
    let p = successes as f64 / nf;
    let den = 1.0 + z * z / nf;
    let mid = (p + z * z / (2.0 * nf)) / den;
    let half = z * (p * (1.0 - p) / nf + z * z / (4.0 * nf * nf)).sqrt() / den;
    ((mid - half).max(0.0), (mid + half).min(1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoverageReport {
    pub n_ci: u64,
    pub n_proxy: u64,
    pub level: f64,
    pub runs: usize,
    pub runs_used: usize,
    pub coverage: f64,
    pub mean_width: f64,
    pub intervals: Vec<ConfidenceInterval>,
}

/// Interval for `Z_inf` from the state at `n_ci`, checked against `Z~` at
/// `n_proxy` in the same run. Runs degenerate at `n_ci` are skipped. With
/// `min_used`, batches continue as in [`calibration_run`] until that many
/// intervals are available, and the first `min_used` are kept.
pub fn ci_coverage(
    cfg: &EnsembleConfig,
    spectral: &SpectralDecomposition<f64>,
    n_ci: u64,
    n_proxy: u64,
    level: f64,
    min_used: Option<usize>,
) -> Result<CoverageReport> {
    if n_proxy < n_ci {
        return Err(Error::InvalidParameter("proxy horizon must not precede the interval horizon".into()));
    }
    let mut intervals = Vec::new();
    let mut hits = Vec::new();
    let mut runs = 0usize;
    let mut batch = cfg.clone();
    for _ in 0..50 {
        let checkpoints = run_checkpoints(&batch, &[n_ci, n_proxy])?;
        runs += checkpoints.len();
        for cp in &checkpoints {
            let zt = spectral.z_tilde(&cp[0].z);
            if zt * (1.0 - zt) < cfg.thresholds.degeneracy {
                continue;
            }
            let ci = ci_z_infinity(&cp[0].z, n_ci, &cfg.schedule, spectral, level)?;
            let proxy = spectral.z_tilde(&cp[1].z);
            hits.push(ci.lower <= proxy && proxy <= ci.upper);
            intervals.push(ci);
        }
        match min_used {
            Some(m) if intervals.len() < m => batch.first_run += batch.n_sims as u64,
            _ => break,
        }
    }
    if intervals.is_empty() {
        return Err(Error::AllDegenerate);
    }
    if let Some(m) = min_used {
        intervals.truncate(m.max(1));
        hits.truncate(m.max(1));
    }
    let k = intervals.len() as f64;
    Ok(CoverageReport {
        n_ci,
        n_proxy,
        level,
        runs,
        runs_used: intervals.len(),
        coverage: hits.iter().filter(|&&h| h).count() as f64 / k,
        mean_width: intervals.iter().map(|c| c.upper - c.lower).sum::<f64>() / k,
        intervals,
    })
}

/// Spread of the final states at each horizon, in run order.
pub fn spread_profile(cfg: &EnsembleConfig, horizons: &[u64]) -> Result<Vec<Vec<f64>>> {
    let cps = run_checkpoints(cfg, horizons)?;
    Ok((0..horizons.len()).map(|h| cps.iter().map(|c| spread(&c[h].z)).collect()).collect())
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        f64::NAN
    } else {
        quantile_sorted(&v, 0.5)
    }
}
