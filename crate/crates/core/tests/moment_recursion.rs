//! Exact second moments of the linearized dynamics, iterated forward and
//! compared with the closed-form limiting covariances.
//!
//! Around a synchronized state the increments have unit conditional
//! covariance (per unit mixture), so with `r = r(n+1)`, `a = 1/(n+1)`:
//! `Z' = (I - r(I - W^T)) Z + r xi`, `N' = (1 - a) N + a W^T Z + a xi`.

use num_complex::Complex64;
use urnnet::asymptotics::{covariance_report, s_gamma_spectral, s_zz_spectral, subcritical_blocks, SpectralBlocks};
use urnnet::linalg::Matrix;
use urnnet::model::{HierarchicalNetwork, StepSizeSchedule};
use urnnet::spectral::{build_example1, build_example2, build_sim_network, from_user_spectral, SpectralDecomposition};

/// Returns `t_n^2 Cov(Z^, N^)` at step `n` with `t_n^2 = n^gamma`.
fn scaled_moments(net: &HierarchicalNetwork<f64>, spec: &SpectralDecomposition<f64>, gamma: f64, c: f64, n: u64) -> Matrix<f64> {
    let k = net.n_agents();
    let wt = net.weights().transpose();
    let m = 2 * k;
    let mut cov = Matrix::<f64>::zeros(m, m);
    for step in 0..n {
        let nn = (step + 1) as f64;
        let r = c * nn.powf(-gamma);
        let a = 1.0 / nn;
        let amat = Matrix::from_fn(m, m, |i, j| match (i < k, j < k) {
            (true, true) => (if i == j { 1.0 - r } else { 0.0 }) + r * wt[(i, j)],
            (true, false) => 0.0,
            (false, true) => a * wt[(i - k, j)],
            (false, false) => if i == j { 1.0 - a } else { 0.0 },
        });
        let b = |i: usize| if i < k { r } else { a };
        let mut next = amat.matmul(&cov).matmul(&amat.transpose());
        for i in 0..m {
            for j in 0..m {
                if i % k == j % k {
                    next[(i, j)] += b(i) * b(j);
                }
            }
        }
        cov = next;
    }
    let w: Vec<f64> = spec.q1().iter().map(|x| x / (k as f64).sqrt()).collect();
    let l = Matrix::from_fn(m, m, |i, j| match (i < k, j < k) {
        (true, true) => (if i == j { 1.0 } else { 0.0 }) - w[j],
        (true, false) => 0.0,
        (false, true) => -w[j],
        (false, false) => if i == j { 1.0 } else { 0.0 },
    });
    l.matmul(&cov).matmul(&l.transpose()).scale((n as f64).powf(gamma))
}

fn joint_from(spec: &SpectralDecomposition<f64>, b: &SpectralBlocks<f64>) -> Matrix<f64> {
    let a = b.to_agent(spec).unwrap();
    let k = spec.n();
    Matrix::from_fn(2 * k, 2 * k, |i, j| match (i < k, j < k) {
        (true, true) => a.zz[(i, j)],
        (true, false) => a.zn[(i, j - k)],
        (false, true) => a.zn[(j, i - k)],
        (false, false) => a.nn[(i - k, j - k)],
    })
}

fn rel_err(emp: &Matrix<f64>, theory: &Matrix<f64>) -> f64 {
    let scale = theory.max_abs();
    emp.max_abs_diff(theory) / scale
}

/// Two-point extrapolation for an `O(1/n)`-type tail when the leading
/// finite-n bias decays like `n^{-p}`.
fn extrapolate(a: &Matrix<f64>, b: &Matrix<f64>, ratio: f64, p: f64) -> Matrix<f64> {
    let f = ratio.powf(p);
    Matrix::from_fn(a.rows(), a.cols(), |i, j| (f * b[(i, j)] - a[(i, j)]) / (f - 1.0))
}

#[test]
fn subcritical_order_one_blocks() {
    let (net, spec) = build_example2::<f64>(2, 2, 0.6, 0.3).unwrap();
    let c = 2.0;
    let theory = joint_from(&spec, &subcritical_blocks(&spec, c).unwrap());
    let emp = scaled_moments(&net, &spec, 1.0, c, 200_000);
    let e = rel_err(&emp, &theory);
    assert!(e < 2e-3, "relative error {e}");
}

#[test]
fn subcritical_sim_network() {
    let (net, spec) = build_sim_network::<f64>(0.8, 0.5).unwrap();
    let c = 3.0;
    let theory = joint_from(&spec, &subcritical_blocks(&spec, c).unwrap());
    let emp = scaled_moments(&net, &spec, 1.0, c, 200_000);
    let e = rel_err(&emp, &theory);
    assert!(e < 2e-3, "relative error {e}");
}

#[test]
fn complex_pair_blocks_are_real() {
    // 3-cycle circulant: eigenvalues form a conjugate pair.
    let wd = [0.5, 0.3, 0.2];
    let rows: Vec<Vec<f64>> = (0..3).map(|h| (0..3).map(|j| wd[(j + 3 - h) % 3]).collect()).collect();
    let net = HierarchicalNetwork::from_rows(&rows, vec![3]).unwrap();
    let root3 = 3f64.sqrt();
    let omega = |k: usize, i: usize| Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * (k * i) as f64 / 3.0);
    let q = Matrix::from_fn(3, 3, |i, k| omega(k, i) / root3);
    let p = Matrix::from_fn(3, 3, |k, i| omega(k, i).conj() / root3);
    let eig: Vec<Complex64> = (0..3).map(|k| (0..3).map(|d| omega(k, d) * wd[d]).sum()).collect();
    let spec = from_user_spectral(&net, eig, vec![1, 1], p, q).unwrap();
    let c = 2.0;
    let sch = StepSizeSchedule::new(1.0, c, 0.99).unwrap();
    let report = covariance_report(&spec, &sch).unwrap();
    let theory = joint_from(&spec, &subcritical_blocks(&spec, c).unwrap());
    let emp = scaled_moments(&net, &spec, 1.0, c, 200_000);
    let e = rel_err(&emp, &theory);
    assert!(e < 2e-3, "relative error {e}");
    assert_eq!(report.joint.rows(), 6);
}

/// Moments in spectral coordinates: `Q^T` on the `Z^` half, `Q~^T` on the `N^` half.
fn spectral_moments(spec: &SpectralDecomposition<f64>, emp: &Matrix<f64>) -> Matrix<Complex64> {
    let k = spec.n();
    let q = spec.right_matrix();
    let zero = Complex64::new(0.0, 0.0);
    let rows = 2 * k - 1;
    let proj = Matrix::from_fn(rows, 2 * k, |i, j| match (i < k - 1, j < k) {
        (true, true) => q[(j, i + 1)],
        (false, false) => q[(j - k, i - (k - 1))],
        _ => zero,
    });
    proj.matmul(&emp.to_complex()).matmul(&proj.transpose())
}

fn max_rel(a: &Matrix<Complex64>, b: &Matrix<Complex64>) -> f64 {
    a.max_norm_diff(b) / b.max_norm()
}

/// Elementwise Aitken extrapolation from moments at `n`, `4n`, `16n`;
/// chains converge like powers of `log n / n` so two points are not enough.
fn aitken(net: &HierarchicalNetwork<f64>, spec: &SpectralDecomposition<f64>, c: f64, n: u64, size: usize) -> Matrix<Complex64> {
    let m: Vec<Matrix<Complex64>> = [n, 4 * n, 16 * n]
        .iter()
        .map(|&n| spectral_moments(spec, &scaled_moments(net, spec, 1.0, c, n)).block(0, size, 0, size))
        .collect();
    Matrix::from_fn(size, size, |i, j| {
        let (x1, x2, x3) = (m[0][(i, j)], m[1][(i, j)], m[2][(i, j)]);
        let den = (x3 - x2) - (x2 - x1);
        if den.norm() < 1e-12 * x3.norm().max(1.0) {
            x3
        } else {
            x3 - (x3 - x2) * (x3 - x2) / den
        }
    })
}

#[test]
fn subcritical_chain_of_two_zz() {
    for (alpha, c) in [(0.8, 1.0), (0.6, 2.0), (0.9, 0.8)] {
        let (net, spec) = build_example1::<f64>(3, alpha).unwrap();
        let zz = s_zz_spectral(&spec, c).unwrap();
        let e = max_rel(&aitken(&net, &spec, c, 100_000, 2), &zz);
        assert!(e < 1e-2, "alpha {alpha} c {c}: relative error {e}");
    }
}

#[test]
fn subpolynomial_chain_of_two() {
    let (net, spec) = build_example1::<f64>(3, 0.7).unwrap();
    let (gamma, c) = (0.6, 1.0);
    let s = s_gamma_spectral(&spec, c).unwrap();
    let p = spec.p_matrix();
    let theory = p.matmul(&s).matmul(&p.transpose()).real_part();
    let a = scaled_moments(&net, &spec, gamma, c, 250_000).block(0, 3, 0, 3);
    let b = scaled_moments(&net, &spec, gamma, c, 1_000_000).block(0, 3, 0, 3);
    let ex = extrapolate(&a, &b, 4.0, 1.0 - gamma);
    let e = rel_err(&ex, &theory);
    assert!(e < 1e-2, "relative error {e}");
}

/// At `c = 1` the empirical means obey the same recursion as the
/// inclinations, so their spectral moments coincide with `S_ZZ`.
#[test]
fn unit_c_mean_blocks_equal_zz_in_recursion() {
    let (net, spec) = build_example1::<f64>(3, 0.8).unwrap();
    let emp = spectral_moments(&spec, &scaled_moments(&net, &spec, 1.0, 1.0, 1_600_000));
    let zz = emp.block(0, 2, 0, 2);
    let zn = emp.block(0, 2, 3, 5);
    let nn = emp.block(3, 5, 3, 5);
    assert!(max_rel(&zn, &zz) < 1e-4);
    assert!(max_rel(&nn, &zz) < 1e-4);
}

/// The closed-form mean blocks carry extra chain terms that the recursion
/// does not reproduce (ZZ on the same chain agrees). Recorded so a change
/// in either side is noticed.
#[test]
fn chain_terms_of_mean_blocks_differ_from_recursion() {
    let (net, spec) = build_example1::<f64>(3, 0.8).unwrap();
    let c = 1.0;
    let b = subcritical_blocks(&spec, c).unwrap();
    let emp = spectral_moments(&spec, &scaled_moments(&net, &spec, 1.0, c, 1_600_000));
    // head-head entries involve no chain terms and agree
    assert!((emp[(0, 3)] - b.zn[(0, 1)]).norm() / b.zn[(0, 1)].norm() < 1e-3);
    assert!((emp[(3, 3)] - b.nn[(1, 1)]).norm() / b.nn[(1, 1)].norm() < 1e-3);
    // entries touching the chain tail do not
    let zn_tail = (emp[(1, 4)] - b.zn[(1, 2)]).norm() / b.zn[(1, 2)].norm();
    let nn_tail = (emp[(4, 4)] - b.nn[(2, 2)]).norm() / b.nn[(2, 2)].norm();
    assert!(zn_tail > 0.1, "zn tail {zn_tail}");
    assert!(nn_tail > 0.1, "nn tail {nn_tail}");
}

/// On a chain of three the recursion weighs offsets `(t, s)` by
/// `(t+s)!/(t! s!)`, which the `(t+s)!` closed form matches only when
/// `t, s <= 1`.
#[test]
fn chain_of_three_zz_weights() {
    let (net, spec) = build_example1::<f64>(4, 0.8).unwrap();
    let c = 1.0;
    let printed = s_zz_spectral(&spec, c).unwrap();
    let q = spec.right_matrix();
    let g = q.transpose().matmul(q);
    let lam = spec.lambda(0);
    let base = (Complex64::new(2.0, 0.0) - lam - lam) * c - 1.0;
    let fact = |k: usize| (1..=k).map(|x| x as f64).product::<f64>();
    let binom = Matrix::from_fn(3, 3, |a, b| {
        let mut acc = Complex64::new(0.0, 0.0);
        for s in 0..=b {
            for t in 0..=a {
                let k = t + s;
                let w = c.powi(k as i32 + 2) * fact(k) / (fact(t) * fact(s));
                acc += g[(a - t + 1, b - s + 1)] * w / base.powu(k as u32 + 1);
            }
        }
        acc
    });
    let emp = aitken(&net, &spec, c, 400_000, 3);
    let e_binom = max_rel(&emp, &binom);
    let e_printed = max_rel(&emp, &printed);
    assert!(e_binom < 1e-2, "binomial weights: {e_binom}");
    assert!(e_printed > 0.05, "factorial weights: {e_printed}");
    // entries with t, s <= 1 coincide
    assert!((printed[(1, 1)] - binom[(1, 1)]).norm() < 1e-12);
}

