//! Limiting covariance matrices of `(Z_n, N_n)` in the three supported
//! regimes, evaluated from Jordan data.
//!
//! Reduced index `a` in `0..N-1` refers to column `a+1` of `Q~`; within a
//! chain, offset `t` walks `t` steps back toward the chain head. Sums whose
//! upper limit is below the lower limit are empty.
//!
//! For chains of length two or less every coefficient here agrees with the
//! exact second-moment recursion of the linearized dynamics. On longer
//! chains that recursion weighs the pair of offsets `(t, s)` by
//! `C(t+s, t)` where these closed forms use `(t+s)!`; the tests of the
//! moment recursion exercise both.
//!
//! Reports exclude the random mixture factor `Z_inf (1 - Z_inf)`.

mod aux;
pub mod oracle;

pub use aux::{aux_h, aux_n_d, d1, d2, h, n1, n2, n3, n4, AuxInputs, AuxKind};
pub use oracle::{limit_sum_analytic, limit_sum_oracle, OracleBranch};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigen, Matrix};
use crate::model::StepSizeSchedule;
use crate::scalar::{cre, factorial, Real, C};
use crate::spectral::{classify_regime, classify_tau, pairwise_projection, Regime, SpectralDecomposition, REGIME_TOL};

use aux::nonzero;

/// Imaginary residue allowed before dropping it.
pub const IMAG_TOL: f64 = 1e-8;
/// Most negative eigenvalue tolerated in a covariance.
pub const PSD_TOL: f64 = 1e-8;

/// `c^2 |q_1|^2 / (N (2 gamma - 1))`.
pub fn sigma_tilde_sq<T: Real>(gamma: T, c: T, q1: &[T], n: usize) -> T {
    let two = T::lit(2.0);
    c * c * norm_sq(q1) / (T::from_usize_lossy(n) * (two * gamma - T::one()))
}

/// `c^2 |q_1|^2 / (N (3 - 2 gamma))`.
pub fn gamma_hat_sq<T: Real>(gamma: T, c: T, q1: &[T], n: usize) -> T {
    let two = T::lit(2.0);
    c * c * norm_sq(q1) / (T::from_usize_lossy(n) * (T::lit(3.0) - two * gamma))
}

fn norm_sq<T: Real>(v: &[T]) -> T {
    v.iter().map(|&x| x * x).sum()
}

/// `x 1 1^T`.
pub fn ones_outer<T: Real>(n: usize, x: T) -> Matrix<T> {
    Matrix::from_fn(n, n, |_, _| x)
}

/// Bilinear Gram matrix of the right eigenvectors, `G[k][l] = q_k^T q_l`.
fn gram<T: Real>(spec: &SpectralDecomposition<T>) -> Matrix<C<T>> {
    let q = spec.right_matrix();
    q.transpose().matmul(q)
}

struct Entry<T: Real> {
    lu: C<T>,
    lv: C<T>,
    pa: usize,
    pb: usize,
}

fn entry<T: Real>(spec: &SpectralDecomposition<T>, a: usize, b: usize) -> Entry<T> {
    let (u, pa) = spec.chain_position(a);
    let (v, pb) = spec.chain_position(b);
    Entry { lu: spec.lambda(u), lv: spec.lambda(v), pa, pb }
}

fn two<T: Real>() -> C<T> {
    cre(T::lit(2.0))
}

fn one<T: Real>() -> C<T> {
    cre(T::one())
}

fn powc<T: Real>(c: T, e: usize) -> C<T> {
    cre(c.powi(e as i32))
}

/// `S_gamma`, the (N-1)x(N-1) spectral covariance of `n^{gamma/2} Z^_n`.
pub fn s_gamma_spectral<T: Real>(spec: &SpectralDecomposition<T>, c: T) -> Result<Matrix<C<T>>> {
    let g = gram(spec);
    let m = spec.n() - 1;
    let mut out = Matrix::zeros(m, m);
    for a in 0..m {
        for b in 0..m {
            let Entry { lu, lv, pa, pb } = entry(spec, a, b);
            let base = nonzero(two::<T>() - lu - lv, 0, 0)?;
            let mut acc = cre(T::zero());
            for s in 0..=pb {
                for t in 0..=pa {
                    let k = t + s;
                    acc = acc
                        + g[(a - t + 1, b - s + 1)] * cre(c * factorial::<T>(k))
                            / crate::scalar::cpowi(base, k + 1);
                }
            }
            out[(a, b)] = acc;
        }
    }
    Ok(out)
}

/// `S_gamma` and `Sigma^_gamma = P S_gamma P^T`.
pub fn s_gamma<T: Real>(
    spec: &SpectralDecomposition<T>,
    gamma: T,
    c: T,
) -> Result<(Matrix<C<T>>, Matrix<T>)> {
    if !(gamma < T::one()) {
        return Err(Error::RegimeMismatch {
            expected: Regime::Subpolynomial,
            found: classify_regime(gamma, c, spec),
        });
    }
    let s = s_gamma_spectral(spec, c)?;
    let p = spec.p_matrix();
    let sigma = realify(&p.matmul(&s).matmul(&p.transpose()))?;
    Ok((s, sigma))
}

fn require_regime<T: Real>(spec: &SpectralDecomposition<T>, c: T, want: Regime) -> Result<()> {
    let found = match spec.tau() {
        Some(tau) => classify_tau(tau, c),
        None => Regime::CriticalSubcritical,
    };
    if found != want {
        return Err(Error::RegimeMismatch { expected: want, found });
    }
    Ok(())
}

/// `S_ZZ` without the regime check.
pub fn s_zz_spectral<T: Real>(spec: &SpectralDecomposition<T>, c: T) -> Result<Matrix<C<T>>> {
    let g = gram(spec);
    let m = spec.n() - 1;
    let mut out = Matrix::zeros(m, m);
    for a in 0..m {
        for b in 0..m {
            let Entry { lu, lv, pa, pb } = entry(spec, a, b);
            let base = nonzero((two::<T>() - lu - lv) * c - one(), 0, 0)?;
            let mut acc = cre(T::zero());
            for s in 0..=pb {
                for t in 0..=pa {
                    let k = t + s;
                    acc = acc
                        + g[(a - t + 1, b - s + 1)] * (powc(c, k + 2) * factorial::<T>(k))
                            / crate::scalar::cpowi(base, k + 1);
                }
            }
            out[(a, b)] = acc;
        }
    }
    Ok(out)
}

/// `S_ZN` without the regime check. Column 0 pairs with `q_1`, column
/// `b+1` with reduced index `b`.
pub fn s_zn_spectral<T: Real>(spec: &SpectralDecomposition<T>, c: T) -> Result<Matrix<C<T>>> {
    let g = gram(spec);
    let n = spec.n();
    let m = n - 1;
    let cc = cre(c);
    let mut out = Matrix::zeros(m, n);
    for a in 0..m {
        let (u, pa) = spec.chain_position(a);
        let lu = spec.lambda(u);
        let base = nonzero(one::<T>() - lu, 0, 0)?;
        let mut acc = cre(T::zero());
        for t in 0..=pa {
            acc = acc + g[(a - t + 1, 0)] * factorial::<T>(t) / crate::scalar::cpowi(base, t + 1);
        }
        out[(a, 0)] = acc * (T::one() - c);

        for b in 0..m {
            let Entry { lu, lv, pa, pb } = entry(spec, a, b);
            let mut acc = cre(T::zero());
            for s in 1..=pb {
                for t in 0..=pa {
                    let k = t + s;
                    let first = n2(k - 1, lu, lv, c) * factorial::<T>(k - 1)
                        / nonzero(d2(k - 1, k, lu, lv, c), k - 1, k)?;
                    let second = n2(k, lu, lv, c) * lv * cc * factorial::<T>(k)
                        / nonzero(d2(k, k + 1, lu, lv, c), k, k + 1)?;
                    acc = acc + g[(a - t + 1, b - s + 1)] * powc(c, k + 1) * (first + second);
                }
            }
            for t in 0..=pa {
                let num = n2(t, lu, lv, c) * (c - T::one()) + n3(t, lu, c);
                let term = num * powc(c, t + 1) * factorial::<T>(t)
                    / nonzero(d2(t, t + 1, lu, lv, c), t, t + 1)?;
                acc = acc + g[(a - t + 1, b + 1)] * term;
            }
            out[(a, b + 1)] = acc;
        }
    }
    Ok(out)
}

/// `S_NN` without the regime check, indexed like the columns of `S_ZN`.
pub fn s_nn_spectral<T: Real>(spec: &SpectralDecomposition<T>, c: T) -> Result<Matrix<C<T>>> {
    let g = gram(spec);
    let n = spec.n();
    let m = n - 1;
    let cc = cre(c);
    let cinv = cre(T::one() / c);
    let one_minus_cinv = one::<T>() - cinv;
    let cm1 = cre(c - T::one());
    let k110 = [one::<T>(), one::<T>(), cre(T::zero())];
    let k_inv = [one_minus_cinv, one_minus_cinv, cinv];
    let k_c = [cm1, cm1, one::<T>()];

    let mut out = Matrix::zeros(n, n);
    out[(0, 0)] = g[(0, 0)] * (c - T::one()) * (c - T::one());

    for b in 0..m {
        let (v, pb) = spec.chain_position(b);
        let lv = spec.lambda(v);
        let mut acc = g[(b + 1, 0)] * (T::one() - c) / nonzero(one::<T>() - lv, 0, 0)?;
        for s in 1..=pb {
            let inner = n4(s - 1, lv, c) * (c * c) * factorial::<T>(s - 1)
                / nonzero(n3(s - 1, lv, c), s - 1, 0)?
                + n4(s, lv, c) * lv * (c * c * c) * factorial::<T>(s) / nonzero(n3(s, lv, c), s, 0)?;
            acc = acc + g[(b - s + 1, 0)] * powc(c, s - 1) * (cinv - one()) * inner;
        }
        out[(0, b + 1)] = acc;
        out[(b + 1, 0)] = acc;
    }

    for a in 0..m {
        for b in 0..m {
            let Entry { lu, lv, pa, pb } = entry(spec, a, b);
            let mut acc = cre(T::zero());
            for t in 1..=pa {
                for s in 1..=pb {
                    let k = t + s;
                    let braces = h(k - 2, lu, lv, c, k110)?
                        + (lu + lv) * cc * h(k - 1, lu, lv, c, k110)?
                        + lu * lv * (c * c) * h(k, lu, lv, c, k110)?;
                    acc = acc + g[(a - t + 1, b - s + 1)] * powc(c, k) * braces;
                }
            }
            for s in 1..=pb {
                let braces = h(s - 1, lv, lu, c, k_inv)? + lv * h(s, lv, lu, c, k_c)?;
                acc = acc + g[(a + 1, b - s + 1)] * powc(c, s + 1) * braces;
            }
            for t in 1..=pa {
                let braces = h(t - 1, lu, lv, c, k_inv)? + lu * h(t, lu, lv, c, k_c)?;
                acc = acc + g[(b + 1, a - t + 1)] * powc(c, t + 1) * braces;
            }
            let e = two::<T>() - lu - lv;
            let num = e * (c - T::one()) + (one::<T>() - lu) * (one::<T>() - lv);
            let den = (one::<T>() - lu) * (one::<T>() - lv) * (e * c - one());
            acc = acc + g[(a + 1, b + 1)] * num / nonzero(den, 0, 0)?;
            out[(a + 1, b + 1)] = acc;
        }
    }
    Ok(out)
}

/// Spectral blocks `(S_ZZ, S_ZN, S_NN)` below the boundary.
pub struct SpectralBlocks<T: Real> {
    pub zz: Matrix<C<T>>,
    pub zn: Matrix<C<T>>,
    pub nn: Matrix<C<T>>,
}

/// Real blocks `(Sigma_ZZ, Sigma_ZN, Sigma_NN)` in agent coordinates.
#[derive(Clone, Debug, Serialize)]
pub struct AgentBlocks<T> {
    pub zz: Matrix<T>,
    pub zn: Matrix<T>,
    pub nn: Matrix<T>,
}

impl<T: Real> SpectralBlocks<T> {
    /// `P S_ZZ P^T`, `P S_ZN P~`, `P~^T S_NN P~` with `P~^T = (p_1, P)`.
    pub fn to_agent(&self, spec: &SpectralDecomposition<T>) -> Result<AgentBlocks<T>> {
        let p = spec.p_matrix();
        let pt = spec.left_matrix();
        let ptt = spec.p_tilde_t();
        Ok(AgentBlocks {
            zz: realify(&p.matmul(&self.zz).matmul(&p.transpose()))?,
            zn: realify(&p.matmul(&self.zn).matmul(pt))?,
            nn: realify(&ptt.matmul(&self.nn).matmul(pt))?,
        })
    }
}

pub fn s_zz<T: Real>(spec: &SpectralDecomposition<T>, c: T) -> Result<(Matrix<C<T>>, Matrix<T>)> {
    require_regime(spec, c, Regime::CriticalSubcritical)?;
    let s = s_zz_spectral(spec, c)?;
    let p = spec.p_matrix();
    let sigma = realify(&p.matmul(&s).matmul(&p.transpose()))?;
    Ok((s, sigma))
}

pub fn s_zn<T: Real>(spec: &SpectralDecomposition<T>, c: T) -> Result<(Matrix<C<T>>, Matrix<T>)> {
    require_regime(spec, c, Regime::CriticalSubcritical)?;
    let s = s_zn_spectral(spec, c)?;
    let sigma = realify(&spec.p_matrix().matmul(&s).matmul(spec.left_matrix()))?;
    Ok((s, sigma))
}

pub fn s_nn<T: Real>(spec: &SpectralDecomposition<T>, c: T) -> Result<(Matrix<C<T>>, Matrix<T>)> {
    require_regime(spec, c, Regime::CriticalSubcritical)?;
    let s = s_nn_spectral(spec, c)?;
    let sigma = realify(&spec.p_tilde_t().matmul(&s).matmul(spec.left_matrix()))?;
    Ok((s, sigma))
}

/// The three subcritical spectral blocks.
pub fn subcritical_blocks<T: Real>(spec: &SpectralDecomposition<T>, c: T) -> Result<SpectralBlocks<T>> {
    require_regime(spec, c, Regime::CriticalSubcritical)?;
    Ok(SpectralBlocks {
        zz: s_zz_spectral(spec, c)?,
        zn: s_zn_spectral(spec, c)?,
        nn: s_nn_spectral(spec, c)?,
    })
}

/// Starred blocks at `tau = 1 - 1/(2c)`. Nonzero only between chain ends
/// of maximal order whose eigenvalues sum to `2 - 1/c`.
pub fn s_starred<T: Real>(spec: &SpectralDecomposition<T>, c: T) -> Result<SpectralBlocks<T>> {
    require_regime(spec, c, Regime::CriticalBoundary)?;
    Ok(starred_spectral(spec, c))
}

fn starred_spectral<T: Real>(spec: &SpectralDecomposition<T>, c: T) -> SpectralBlocks<T> {
    let g = gram(spec);
    let n = spec.n();
    let m = n - 1;
    let rho = spec.rho();
    let cum = spec.cumulative_indices();
    let target = cre(T::lit(2.0) - T::one() / c);
    let tol = T::tol(REGIME_TOL);
    let mut zz = Matrix::zeros(m, m);
    let mut zn = Matrix::zeros(m, n);
    let mut nn = Matrix::zeros(n, n);
    let denom = T::from_usize_lossy(2 * rho - 1);
    for u in 0..spec.n_blocks() {
        for v in 0..spec.n_blocks() {
            if spec.block_orders()[u] != rho || spec.block_orders()[v] != rho {
                continue;
            }
            let (lu, lv) = (spec.lambda(u), spec.lambda(v));
            let d = lu + lv - target;
            if d.re.abs() > tol || d.im.abs() > tol {
                continue;
            }
            let (ia, ib) = (cum[u + 1] - 1, cum[v + 1] - 1);
            let heads = g[(cum[u] + 1, cum[v] + 1)];
            let base = heads * powc(c, 2 * rho) / denom;
            zz[(ia, ib)] = base;
            zn[(ia, ib + 1)] = base * lv / ((one::<T>() - lu) * c);
            nn[(ia + 1, ib + 1)] = base * lu * lv / ((one::<T>() - lu) * (one::<T>() - lv) * (c * c));
        }
    }
    SpectralBlocks { zz, zn, nn }
}

/// Drops the imaginary part after checking it is a rounding residue.
pub fn realify<T: Real>(m: &Matrix<C<T>>) -> Result<Matrix<T>> {
    let scale = m.max_norm().max(T::one());
    let im = m.max_imag();
    if im > T::tol(IMAG_TOL) * scale {
        return Err(Error::Covariance(format!("imaginary residue {:e}", im.as_f64())));
    }
    Ok(m.real_part())
}

/// Named blocks of a regime.
#[derive(Clone, Debug, Serialize)]
pub struct CovarianceBlocks<T> {
    pub sigma_tilde: Matrix<T>,
    pub gamma_hat: Option<Matrix<T>>,
    /// `Sigma^_gamma` (subpolynomial only).
    pub sigma_gamma: Option<Matrix<T>>,
    /// Subcritical or starred blocks according to the regime.
    pub agent: Option<AgentBlocks<T>>,
}

/// How the centered process is scaled before its covariance converges.
#[derive(Clone, Debug, Serialize)]
pub struct Scaling {
    /// Human-readable rate for `(Z, N) - Z_inf 1`.
    pub joint: String,
    /// Rate for `Z^` in the subpolynomial regime.
    pub z_hat: Option<String>,
    pub gamma: f64,
    pub rho: usize,
}

impl Scaling {
    /// Factor `t_n^2` multiplying the empirical covariance of the joint
    /// vector (or of `Z^` when `z_hat` applies).
    pub fn factor(regime: Regime, gamma: f64, rho: usize, n: f64) -> f64 {
        match regime {
            Regime::Subpolynomial => n.powf(gamma),
            Regime::CriticalSubcritical => n,
            Regime::CriticalBoundary => n / n.ln().powi(2 * rho as i32 - 1),
            Regime::Unsupported => f64::NAN,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CovarianceReport<T> {
    pub regime: Regime,
    pub scaling: Scaling,
    pub blocks: CovarianceBlocks<T>,
    pub joint: Matrix<T>,
}

/// Evaluates every block for the regime of `(schedule, spec)` and the
/// joint 2N x 2N matrix.
pub fn covariance_report<T: Real>(
    spec: &SpectralDecomposition<T>,
    schedule: &StepSizeSchedule<T>,
) -> Result<CovarianceReport<T>> {
    let (gamma, c) = (schedule.gamma(), schedule.c());
    let regime = classify_regime(gamma, c, spec);
    let n = spec.n();
    let q1 = spec.q1();
    let rho = spec.rho();
    let scaling = match regime {
        Regime::Subpolynomial => Scaling {
            joint: "n^(gamma - 1/2)".into(),
            z_hat: Some("n^(gamma/2)".into()),
            gamma: gamma.as_f64(),
            rho,
        },
        Regime::CriticalSubcritical => Scaling { joint: "n^(1/2)".into(), z_hat: None, gamma: 1.0, rho },
        Regime::CriticalBoundary => Scaling {
            joint: "n^(1/2) / (log n)^(rho - 1/2)".into(),
            z_hat: None,
            gamma: 1.0,
            rho,
        },
        Regime::Unsupported => return Err(Error::UnsupportedRegime(regime)),
    };
    let sigma_tilde = ones_outer(n, sigma_tilde_sq(gamma, c, &q1, n));
    let blocks = match regime {
        Regime::Subpolynomial => CovarianceBlocks {
            sigma_tilde,
            gamma_hat: Some(ones_outer(n, gamma_hat_sq(gamma, c, &q1, n))),
            sigma_gamma: if n > 1 { Some(s_gamma(spec, gamma, c)?.1) } else { None },
            agent: None,
        },
        Regime::CriticalSubcritical => CovarianceBlocks {
            sigma_tilde,
            gamma_hat: None,
            sigma_gamma: None,
            agent: Some(subcritical_blocks(spec, c)?.to_agent(spec)?),
        },
        Regime::CriticalBoundary => CovarianceBlocks {
            sigma_tilde,
            gamma_hat: None,
            sigma_gamma: None,
            agent: Some(s_starred(spec, c)?.to_agent(spec)?),
        },
        Regime::Unsupported => unreachable!(),
    };
    let joint = assemble_joint(regime, &blocks, n)?;
    Ok(CovarianceReport { regime, scaling, blocks, joint })
}

/// Joint covariance of the regime-scaled `((Z_n, N_n) - Z_inf 1)`.
pub fn assemble_joint<T: Real>(regime: Regime, blocks: &CovarianceBlocks<T>, n: usize) -> Result<Matrix<T>> {
    let missing = |what: &str| Error::Covariance(format!("missing block {what}"));
    let st = &blocks.sigma_tilde;
    let (tl, tr, br) = match regime {
        Regime::Subpolynomial => {
            let gh = blocks.gamma_hat.as_ref().ok_or_else(|| missing("gamma_hat"))?;
            (st.clone(), st.clone(), st + gh)
        }
        Regime::CriticalSubcritical => {
            let a = blocks.agent.as_ref().ok_or_else(|| missing("subcritical"))?;
            (st + &a.zz, st + &a.zn, st + &a.nn)
        }
        Regime::CriticalBoundary => {
            let a = blocks.agent.as_ref().ok_or_else(|| missing("starred"))?;
            (a.zz.clone(), a.zn.clone(), a.nn.clone())
        }
        Regime::Unsupported => return Err(Error::UnsupportedRegime(regime)),
    };
    let joint = Matrix::from_fn(2 * n, 2 * n, |i, j| match (i < n, j < n) {
        (true, true) => tl[(i, j)],
        (true, false) => tr[(i, j - n)],
        (false, true) => tr[(j, i - n)],
        (false, false) => br[(i - n, j - n)],
    });
    check_covariance(&joint)?;
    Ok(joint)
}

/// Symmetry and positive semidefiniteness to the module tolerances.
pub fn check_covariance<T: Real>(m: &Matrix<T>) -> Result<()> {
    let scale = m.max_abs().max(T::one());
    let asym = m.asymmetry();
    if asym > T::tol(1e-10) * scale {
        return Err(Error::Covariance(format!("asymmetry {:e}", asym.as_f64())));
    }
    let (vals, _) = symmetric_eigen(m);
    if let Some(&min) = vals.first() {
        if min < -T::tol(PSD_TOL) * scale {
            return Err(Error::Covariance(format!("negative eigenvalue {:e}", min.as_f64())));
        }
    }
    Ok(())
}

/// Limiting covariance of agent differences.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum PairwiseCov<T> {
    /// Variance of `n^{gamma/2} (Z_i - Z_j)`.
    Scalar(T),
    /// Covariance of the scaled `(Z_i - Z_j, N_i - N_j)`.
    Matrix([[T; 2]; 2]),
}

/// Synchronization covariance between agents `i` and `j`.
pub fn pairwise_sync_cov<T: Real>(
    spec: &SpectralDecomposition<T>,
    regime: Regime,
    gamma: T,
    c: T,
    i: usize,
    j: usize,
) -> Result<PairwiseCov<T>> {
    let (p, pt) = pairwise_projection(spec, i, j)?;
    let quad = |x: &[C<T>], m: &Matrix<C<T>>, y: &[C<T>]| -> T {
        let my = m.mul_vec(y);
        crate::linalg::dot(x, &my).re
    };
    match regime {
        Regime::Subpolynomial => {
            let (s, _) = s_gamma(spec, gamma, c)?;
            Ok(PairwiseCov::Scalar(quad(&p, &s, &p)))
        }
        Regime::CriticalSubcritical | Regime::CriticalBoundary => {
            let b = if regime == Regime::CriticalSubcritical {
                subcritical_blocks(spec, c)?
            } else {
                s_starred(spec, c)?
            };
            let zz = quad(&p, &b.zz, &p);
            let zn = quad(&p, &b.zn, &pt);
            let nn = quad(&pt, &b.nn, &pt);
            Ok(PairwiseCov::Matrix([[zz, zn], [zn, nn]]))
        }
        Regime::Unsupported => Err(Error::UnsupportedRegime(regime)),
    }
}
