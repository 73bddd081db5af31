//! Structure tests against a hypothesized `W_0`, intervals for `Z_inf` and
//! confidence regions by test inversion.

use rayon::prelude::*;
use serde::Serialize;
use statrs::function::gamma::gamma_ur;

use crate::asymptotics::{s_gamma, s_starred, s_zz, sigma_tilde_sq};
use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigen, Matrix};
use crate::model::{HierarchicalNetwork, StepSizeSchedule};
use crate::scalar::Real;
use crate::spectral::{classify_regime, Regime, SpectralDecomposition};

/// Relative eigenvalue cutoff of [`pseudo_inverse`].
pub const PINV_TOL: f64 = 1e-10;
/// Runs with `Z~(1 - Z~)` below this are flagged degenerate.
pub const DEGENERACY_THRESHOLD: f64 = 0.01;

/// Moore-Penrose inverse of a symmetric matrix and its numerical rank.
///
/// Eigenvalues with `|l| <= tol * max |l|` are dropped.
pub fn pseudo_inverse<T: Real>(m: &Matrix<T>, tol: T) -> (Matrix<T>, usize) {
    let n = m.rows();
    let (vals, vecs) = symmetric_eigen(m);
    let top = vals.iter().fold(T::zero(), |acc, v| acc.max(v.abs()));
    let cut = tol * top;
    let kept: Vec<(usize, T)> = vals
        .iter()
        .enumerate()
        .filter(|(_, v)| top > T::zero() && v.abs() > cut)
        .map(|(k, &v)| (k, T::one() / v))
        .collect();
    let pinv = Matrix::from_fn(n, n, |i, j| {
        kept.iter().map(|&(k, inv)| vecs[(i, k)] * inv * vecs[(j, k)]).sum()
    });
    (pinv.symmetrize(), kept.len())
}

/// Upper tail `P(chi2_dof > x)`.
pub fn chi2_tail(x: f64, dof: usize) -> Result<f64> {
    if dof == 0 {
        return Err(Error::InvalidParameter("chi-square needs dof >= 1".into()));
    }
    if x.is_nan() || x < 0.0 {
        return Err(Error::InvalidParameter(format!("chi-square argument {x} must be >= 0")));
    }
    if x == 0.0 {
        return Ok(1.0);
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    Ok(gamma_ur(dof as f64 / 2.0, x / 2.0))
}

/// Lower-tail quantile: `x` with `P(chi2_dof <= x) = p`.
pub fn chi2_quantile(p: f64, dof: usize) -> Result<f64> {
    if dof == 0 {
        return Err(Error::InvalidParameter("chi-square needs dof >= 1".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParameter(format!("probability {p} outside [0, 1]")));
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    if p == 1.0 {
        return Ok(f64::INFINITY);
    }
    let target = 1.0 - p;
    let tail = |x: f64| chi2_tail(x, dof).expect("valid arguments");
    let mut lo = 0.0;
    let mut hi = (dof as f64).max(1.0);
    while tail(hi) > target {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Ok(f64::INFINITY);
        }
    }
    // Bisection on the bracket [lo, hi]; the tail is monotone decreasing.
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if tail(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Upper `a` quantile of the standard normal, `a` in `(0, 1/2]`.
pub fn normal_upper_quantile(a: f64) -> Result<f64> {
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::InvalidParameter(format!("tail probability {a} outside (0, 1)")));
    }
    let q = chi2_quantile(1.0 - 2.0 * a.min(1.0 - a), 1)?.sqrt();
    Ok(if a <= 0.5 { q } else { -q })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TestOutcome {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub regime: Regime,
    /// `Z~_n (1 - Z~_n)` used in the normalization.
    pub mixing_proxy: f64,
    pub degenerate: bool,
}

/// Covariance matrix whose pseudoinverse enters the statistic, with the
/// factor `t_n^2` applied to the quadratic form.
fn test_matrix<T: Real>(
    spectral: &SpectralDecomposition<T>,
    schedule: &StepSizeSchedule<T>,
    regime: Regime,
    n: u64,
) -> Result<(Matrix<T>, f64)> {
    let (gamma, c) = (schedule.gamma(), schedule.c());
    let nf = n as f64;
    match regime {
        Regime::Subpolynomial => Ok((s_gamma(spectral, gamma, c)?.1, nf.powf(gamma.as_f64()))),
        Regime::CriticalSubcritical => Ok((s_zz(spectral, c)?.1, nf)),
        Regime::CriticalBoundary => {
            let zz = s_starred(spectral, c)?.to_agent(spectral)?.zz;
            let rho = spectral.rho() as i32;
            Ok((zz, nf / nf.ln().powi(2 * rho - 1)))
        }
        Regime::Unsupported => Err(Error::UnsupportedRegime(regime)),
    }
}

/// Chi-square structure statistic of `H_0: W = W_0` for an observed `Z_n`.
///
/// `spectral` describes `W_0`. The statistic is
/// `t_n^2 [Z~(1 - Z~)]^-1 Z^^T Sigma^+ Z^` with `Z^ = P Q^T Z_n` and the
/// regime's covariance. When the proxy is zero the statistic is `0` if
/// `Z^ = 0` and `f64::MAX` otherwise; such runs are always degenerate.
pub fn test_statistic<T: Real>(
    zn: &[T],
    n: u64,
    schedule: &StepSizeSchedule<T>,
    spectral: &SpectralDecomposition<T>,
    regime: Regime,
) -> Result<TestOutcome> {
    test_statistic_with(zn, n, schedule, spectral, regime, DEGENERACY_THRESHOLD)
}

pub fn test_statistic_with<T: Real>(
    zn: &[T],
    n: u64,
    schedule: &StepSizeSchedule<T>,
    spectral: &SpectralDecomposition<T>,
    regime: Regime,
    degeneracy: f64,
) -> Result<TestOutcome> {
    if !regime.is_supported() {
        return Err(Error::UnsupportedRegime(regime));
    }
    let found = classify_regime(schedule.gamma(), schedule.c(), spectral);
    if found != regime {
        return Err(Error::RegimeMismatch { expected: regime, found });
    }
    if zn.len() != spectral.n() {
        return Err(Error::DimensionMismatch { expected: spectral.n(), found: zn.len() });
    }
    if n < 2 {
        return Err(Error::InvalidParameter("need n >= 2".into()));
    }
    let zt = spectral.z_tilde(zn).as_f64();
    let mix = zt * (1.0 - zt);
    let degenerate = mix < degeneracy;
    if spectral.n() == 1 {
        return Ok(TestOutcome { statistic: 0.0, dof: 0, p_value: 1.0, regime, mixing_proxy: mix, degenerate });
    }
    let (sigma, factor) = test_matrix(spectral, schedule, regime, n)?;
    let (pinv, rank) = pseudo_inverse(&sigma, T::tol(PINV_TOL));
    let zh = spectral.z_hat(zn);
    let quad = crate::linalg::dot(&zh, &pinv.mul_vec(&zh)).as_f64().max(0.0);
    let statistic = if mix > 0.0 {
        factor * quad / mix
    } else if quad == 0.0 {
        0.0
    } else {
        f64::MAX
    };
    let p_value = if rank == 0 { 1.0 } else { chi2_tail(statistic, rank)? };
    Ok(TestOutcome { statistic, dof: rank, p_value, regime, mixing_proxy: mix, degenerate })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConfidenceInterval {
    pub center: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
}

/// `Z~_n +- z_{a/2} sqrt(n^{-(2 gamma - 1)} Z~_n (1 - Z~_n) sigma~^2_gamma)`,
/// clipped to `[0, 1]`. `level` is the coverage `1 - a`.
pub fn ci_z_infinity<T: Real>(
    zn: &[T],
    n: u64,
    schedule: &StepSizeSchedule<T>,
    spectral: &SpectralDecomposition<T>,
    level: f64,
) -> Result<ConfidenceInterval> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParameter(format!("level {level} outside (0, 1)")));
    }
    if zn.len() != spectral.n() {
        return Err(Error::DimensionMismatch { expected: spectral.n(), found: zn.len() });
    }
    if n == 0 {
        return Err(Error::ZeroHorizon);
    }
    let gamma = schedule.gamma();
    let s2 = sigma_tilde_sq(gamma, schedule.c(), &spectral.q1(), spectral.n()).as_f64();
    let center = spectral.z_tilde(zn).as_f64().clamp(0.0, 1.0);
    let z = normal_upper_quantile((1.0 - level) / 2.0)?;
    let rate = (n as f64).powf(-(2.0 * gamma.as_f64() - 1.0));
    let half = z * (rate * center * (1.0 - center) * s2).sqrt();
    Ok(ConfidenceInterval {
        center,
        lower: (center - half).max(0.0),
        upper: (center + half).min(1.0),
        level,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegionPoint {
    pub theta: Vec<f64>,
    /// `None` when the grid point could not be evaluated.
    pub outcome: Option<TestOutcome>,
    pub threshold: Option<f64>,
    pub accepted: bool,
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConfidenceRegion {
    pub level: f64,
    pub points: Vec<RegionPoint>,
}

impl ConfidenceRegion {
    pub fn accepted(&self) -> impl Iterator<Item = &RegionPoint> {
        self.points.iter().filter(|p| p.accepted)
    }
}

/// Builds `W_0(theta)` and its spectral data.
pub type Builder<'a> =
    dyn Fn(&[f64]) -> Result<(HierarchicalNetwork<f64>, SpectralDecomposition<f64>)> + Sync + 'a;

/// Inverts the structure test over `grid`: a point is accepted when its
/// regime statistic is at most `chi2_quantile(level, dof)` and the run is
/// not degenerate under that point's `W_0`.
pub fn confidence_region(
    grid: &[Vec<f64>],
    builder: &Builder<'_>,
    zn: &[f64],
    n: u64,
    schedule: &StepSizeSchedule<f64>,
    level: f64,
) -> Result<ConfidenceRegion> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if !(level > 0.0 && level <= 1.0) {
        return Err(Error::InvalidParameter(format!("level {level} outside (0, 1]")));
    }
    let points: Vec<RegionPoint> = grid
        .par_iter()
        .map(|theta| {
            let fail = |e: Error| RegionPoint {
                theta: theta.clone(),
                outcome: None,
                threshold: None,
                accepted: false,
                note: Some(e.to_string()),
            };
            let (_, spec) = match builder(theta) {
                Ok(b) => b,
                Err(e) => return fail(e),
            };
            let regime = classify_regime(schedule.gamma(), schedule.c(), &spec);
            let outcome = match test_statistic(zn, n, schedule, &spec, regime) {
                Ok(o) => o,
                Err(e) => return fail(e),
            };
            let threshold = if outcome.dof == 0 {
                Some(f64::INFINITY)
            } else {
                chi2_quantile(level, outcome.dof).ok()
            };
            let accepted = !outcome.degenerate && threshold.is_some_and(|t| outcome.statistic <= t);
            RegionPoint { theta: theta.clone(), outcome: Some(outcome), threshold, accepted, note: None }
        })
        .collect();
    let evaluated: Vec<&RegionPoint> = points.iter().filter(|p| p.outcome.is_some()).collect();
    if !evaluated.is_empty() && evaluated.iter().all(|p| p.outcome.as_ref().is_some_and(|o| o.degenerate)) {
        return Err(Error::AllDegenerate);
    }
    Ok(ConfidenceRegion { level, points })
}

/// `lo:hi:steps` grid axis, endpoints included.
pub fn linspace(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    match steps {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..steps).map(|k| lo + (hi - lo) * k as f64 / (steps - 1) as f64).collect(),
    }
}

/// Cartesian product of axes, last axis fastest.
pub fn product_grid(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    axes.iter().fold(vec![Vec::new()], |acc, axis| {
        acc.iter()
            .flat_map(|prefix| {
                axis.iter().map(move |&x| {
                    let mut p = prefix.clone();
                    p.push(x);
                    p
                })
            })
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{build_example1, build_example2, from_user_spectral};
    use proptest::prelude::*;

    /// Penrose residuals, each relative to the size of its target. `P` grows
    /// like the inverse of the smallest kept eigenvalue, so `|PMP - P|` in
    /// absolute terms carries that factor even for an exact inverse.
    fn penrose(m: &Matrix<f64>, p: &Matrix<f64>) -> f64 {
        let mpm = m.matmul(p).matmul(m);
        let pmp = p.matmul(m).matmul(p);
        let mp = m.matmul(p);
        let pm = p.matmul(m);
        let rel = |d: f64, scale: f64| d / scale.max(1.0);
        rel(mpm.max_abs_diff(m), m.max_abs())
            .max(rel(pmp.max_abs_diff(p), p.max_abs()))
            .max(mp.asymmetry())
            .max(pm.asymmetry())
    }

    #[test]
    fn pinv_examples() {
        let (p, r) = pseudo_inverse(&Matrix::<f64>::identity(3), PINV_TOL);
        assert_eq!(r, 3);
        assert!(p.max_abs_diff(&Matrix::identity(3)) < 1e-14);
        let d = Matrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let (p, r) = pseudo_inverse(&d, PINV_TOL);
        assert_eq!(r, 1);
        assert!((p[(0, 0)] - 0.5).abs() < 1e-15 && p[(1, 1)].abs() < 1e-15);
        // v v^T with |v|^4 = 16
        let ones = Matrix::from_fn(4, 4, |_, _| 1.0);
        let (p, r) = pseudo_inverse(&ones, PINV_TOL);
        assert_eq!(r, 1);
        assert!(p.max_abs_diff(&Matrix::from_fn(4, 4, |_, _| 1.0 / 16.0)) < 1e-14);
        let (p, r) = pseudo_inverse(&Matrix::<f64>::zeros(2, 2), PINV_TOL);
        assert_eq!(r, 0);
        assert_eq!(p.max_abs(), 0.0);
    }

    proptest! {
        #[test]
        fn penrose_conditions(entries in prop::collection::vec(-1.0f64..1.0, 30), rank in 1usize..6) {
            // B is 6 x rank, M = B B^T has rank <= rank
            let b = Matrix::from_fn(6, rank, |i, j| entries[(i * 5 + j) % 30]);
            let m = b.matmul(&b.transpose());
            let (p, r) = pseudo_inverse(&m, PINV_TOL);
            prop_assert!(r <= rank);
            prop_assert!(penrose(&m, &p) < 1e-9);
        }

        #[test]
        fn chi2_round_trip(p in 0.001f64..0.999, dof in 1usize..30) {
            let x = chi2_quantile(p, dof).unwrap();
            prop_assert!((chi2_tail(x, dof).unwrap() - (1.0 - p)).abs() < 1e-6);
        }
    }

    /// Even dof: `P(chi2_{2m} > x) = e^{-x/2} sum_{i<m} (x/2)^i / i!`.
    fn poisson_tail(x: f64, dof: usize) -> f64 {
        let h = x / 2.0;
        let mut term = 1.0;
        let mut acc = 0.0;
        for i in 0..dof / 2 {
            if i > 0 {
                term *= h / i as f64;
            }
            acc += term;
        }
        (-h).exp() * acc
    }

    #[test]
    fn chi2_against_poisson_sum() {
        for dof in [2usize, 4, 6, 10, 20] {
            for x in [0.1, 1.0, 3.0, 7.5, 15.0, 40.0] {
                let a = chi2_tail(x, dof).unwrap();
                let b = poisson_tail(x, dof);
                assert!((a - b).abs() <= 1e-8 * b.max(1e-300), "dof {dof} x {x}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn chi2_known_values() {
        assert_eq!(chi2_tail(0.0, 3).unwrap(), 1.0);
        assert!((chi2_quantile(0.95, 1).unwrap() - 3.841_458_820_694_124).abs() < 1e-8);
        assert!((chi2_quantile(0.95, 2).unwrap() - 5.991_464_547_107_979).abs() < 1e-8);
        assert!((normal_upper_quantile(0.025).unwrap() - 1.959_963_984_540_054).abs() < 1e-8);
        assert!(chi2_tail(1.0, 0).is_err());
        assert!(chi2_quantile(0.5, 0).is_err());
    }

    fn ex2() -> (HierarchicalNetwork<f64>, SpectralDecomposition<f64>) {
        build_example2(2, 2, 0.6, 0.3).unwrap()
    }

    #[test]
    fn synchronized_state_is_zero() {
        let (_, spec) = ex2();
        let sch = StepSizeSchedule::new(1.0, 2.0, 0.99).unwrap();
        let out = test_statistic(&[0.4; 4], 1000, &sch, &spec, Regime::CriticalSubcritical).unwrap();
        assert!(out.statistic.abs() < 1e-20);
        assert!((out.p_value - 1.0).abs() < 1e-12);
        assert!(!out.degenerate);
        assert_eq!(out.dof, 3);
    }

    #[test]
    fn polarized_state_is_degenerate() {
        let (_, spec) = ex2();
        let sch = StepSizeSchedule::new(1.0, 2.0, 0.99).unwrap();
        let out = test_statistic(&[0.0; 4], 1000, &sch, &spec, Regime::CriticalSubcritical).unwrap();
        assert!(out.degenerate);
        assert_eq!(out.mixing_proxy, 0.0);
    }

    #[test]
    fn regime_checks() {
        let (_, spec) = ex2();
        let sch = StepSizeSchedule::new(1.0, 2.0, 0.99).unwrap();
        let z = [0.4, 0.5, 0.45, 0.42];
        assert!(matches!(
            test_statistic(&z, 1000, &sch, &spec, Regime::Subpolynomial),
            Err(Error::RegimeMismatch { .. })
        ));
        assert!(matches!(
            test_statistic(&z, 1000, &sch, &spec, Regime::Unsupported),
            Err(Error::UnsupportedRegime(_))
        ));
        let sub = StepSizeSchedule::new(0.75, 0.8, 0.99).unwrap();
        let out = test_statistic(&z, 1000, &sub, &spec, Regime::Subpolynomial).unwrap();
        assert!(out.statistic > 0.0 && out.dof == 3);
    }

    #[test]
    fn boundary_statistic() {
        // Example 1 with alpha = 0.5, c = 1: tau = 0.5 = 1 - 1/(2c)
        let (_, spec) = build_example1::<f64>(3, 0.5).unwrap();
        let sch = StepSizeSchedule::new(1.0, 1.0, 0.99).unwrap();
        let out = test_statistic(&[0.5, 0.4, 0.6], 10_000, &sch, &spec, Regime::CriticalBoundary).unwrap();
        assert_eq!(out.dof, 1);
        assert!(out.statistic.is_finite() && out.statistic >= 0.0);
    }

    /// Rescaling each non-dominant pair `(p_k, q_k) -> (p_k / s, s q_k)`
    /// leaves the statistic unchanged.
    #[test]
    fn statistic_ignores_eigenvector_scaling() {
        let (net, spec) = ex2();
        let sch = StepSizeSchedule::new(1.0, 2.0, 0.99).unwrap();
        let z = [0.41, 0.55, 0.47, 0.38];
        let base = test_statistic(&z, 5000, &sch, &spec, Regime::CriticalSubcritical).unwrap();
        let s = [3.0, 1.0, 0.5, -2.0, 0.25];
        let left = spec.left_matrix();
        let right = spec.right_matrix();
        let p = Matrix::from_fn(4, 4, |k, i| left[(k, i)] / s[k]);
        let q = Matrix::from_fn(4, 4, |i, k| right[(i, k)] * s[k]);
        let scaled =
            from_user_spectral(&net, spec.eigenvalues().to_vec(), spec.block_orders().to_vec(), p, q).unwrap();
        let out = test_statistic(&z, 5000, &sch, &scaled, Regime::CriticalSubcritical).unwrap();
        assert!((out.statistic - base.statistic).abs() < 1e-9 * base.statistic);
        assert_eq!(out.dof, base.dof);
    }

    #[test]
    fn ci_behaviour() {
        let (_, spec) = ex2();
        let sch = StepSizeSchedule::new(0.9, 1.0, 0.99).unwrap();
        let ci = ci_z_infinity(&[0.0; 4], 100, &sch, &spec, 0.95).unwrap();
        assert_eq!((ci.lower, ci.center, ci.upper), (0.0, 0.0, 0.0));
        let z = [0.5, 0.5, 0.3, 0.2];
        let a = ci_z_infinity(&z, 1000, &sch, &spec, 0.95).unwrap();
        let b = ci_z_infinity(&z, 16_000, &sch, &spec, 0.95).unwrap();
        assert!(a.lower <= a.center && a.center <= a.upper);
        let ratio = (a.upper - a.lower) / (b.upper - b.lower);
        assert!((ratio - 16f64.powf(0.4)).abs() < 1e-9);
        assert!(ci_z_infinity(&z, 1000, &sch, &spec, 1.0).is_err());
    }

    fn ex2_builder(theta: &[f64]) -> Result<(HierarchicalNetwork<f64>, SpectralDecomposition<f64>)> {
        build_example2(2, 2, theta[0], theta[1])
    }

    #[test]
    fn region_monotone_in_level() {
        let sch = StepSizeSchedule::new(1.0, 2.0, 0.99).unwrap();
        let grid = product_grid(&[linspace(0.4, 0.8, 5), linspace(0.1, 0.35, 4)]);
        let z = [0.50, 0.52, 0.47, 0.49];
        let sizes: Vec<usize> = [0.5, 0.9, 0.99, 1.0]
            .iter()
            .map(|&l| confidence_region(&grid, &ex2_builder, &z, 20_000, &sch, l).unwrap().accepted().count())
            .collect();
        assert!(sizes.windows(2).all(|w| w[0] <= w[1]), "{sizes:?}");
        let all = confidence_region(&grid, &ex2_builder, &z, 20_000, &sch, 1.0).unwrap();
        let evaluable = all.points.iter().filter(|p| p.outcome.is_some()).count();
        assert_eq!(sizes[3], evaluable);
        assert!(confidence_region(&[], &ex2_builder, &z, 100, &sch, 0.9).is_err());
        assert!(matches!(
            confidence_region(&grid, &ex2_builder, &[0.0; 4], 100, &sch, 0.9),
            Err(Error::AllDegenerate)
        ));
    }

    #[test]
    fn grids() {
        assert_eq!(linspace(0.0, 1.0, 3), vec![0.0, 0.5, 1.0]);
        assert_eq!(product_grid(&[vec![1.0, 2.0], vec![3.0]]), vec![vec![1.0, 3.0], vec![2.0, 3.0]]);
    }
}
