//! Direct evaluation of the scaled sums
//! `t_n^2 sum_k r_k^2 (log n - log k)^q F_{k+1,n}(x) F_{k+1,n}(y)`,
//! `F_{k+1,n}(x) = prod_{j=k+1}^{n} (1 - r_j x)`, whose limits are the
//! coefficients inside the covariance blocks. Used only for cross-checks.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum OracleBranch {
    /// `gamma < 1`.
    Subpolynomial,
    /// `gamma = 1`, `c Re(x + y) > 1`.
    Subcritical,
    /// `gamma = 1`, `c Re(x + y) = 1`.
    Boundary,
}

pub fn branch(x: Complex64, y: Complex64, c: f64, gamma: f64) -> OracleBranch {
    if gamma < 1.0 {
        OracleBranch::Subpolynomial
    } else if (c * (x + y).re - 1.0).abs() <= 1e-9 {
        OracleBranch::Boundary
    } else {
        OracleBranch::Subcritical
    }
}

/// Limit of the scaled sum as `n -> inf`.
pub fn limit_sum_analytic(x: Complex64, y: Complex64, q: u32, c: f64, gamma: f64) -> Complex64 {
    let qf = factorial(q);
    match branch(x, y, c, gamma) {
        OracleBranch::Subcritical => c * c * qf / (c * (x + y) - 1.0).powu(q + 1),
        OracleBranch::Boundary => {
            if (x + y).im.abs() > 1e-9 {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(c * c / (q as f64 + 1.0), 0.0)
            }
        }
        OracleBranch::Subpolynomial => {
            Complex64::new(qf * (1.0 - gamma).powi(q as i32) / c.powi(q as i32 - 1), 0.0)
                / (x + y).powu(q + 1)
        }
    }
}

fn factorial(q: u32) -> f64 {
    (1..=q).map(f64::from).product()
}

/// Finite-`n` value, accumulated backward with the running product kept
/// as a complex logarithm.
pub fn limit_sum_oracle(x: Complex64, y: Complex64, q: u32, c: f64, gamma: f64, n: u64) -> Result<Complex64> {
    if n < 10_000 {
        return Err(Error::InvalidParameter(format!("n = {n} is too small for the limit oracle")));
    }
    if !(gamma > 0.5 && gamma <= 1.0) || !(c > 0.0) {
        return Err(Error::InvalidParameter("need gamma in (1/2, 1] and c > 0".into()));
    }
    let r = |k: u64| c * (k as f64).powf(-gamma);
    let big = x.norm().max(y.norm());
    // smallest m0 with |r_j x| < 1/2 for every j >= m0
    let mut m0 = 1u64;
    while r(m0) * big >= 0.5 {
        m0 += 1;
        if m0 >= n {
            return Err(Error::InvalidParameter("step sizes too large over the whole range".into()));
        }
    }
    let nf = n as f64;
    let ln_n = nf.ln();
    let weight = |k: u64| -> f64 {
        let kf = k as f64;
        if gamma < 1.0 {
            (nf.powf(1.0 - gamma) - kf.powf(1.0 - gamma)).powi(q as i32)
        } else {
            (ln_n - kf.ln()).powi(q as i32)
        }
    };
    let one = Complex64::new(1.0, 0.0);
    let mut log_f = Complex64::new(0.0, 0.0);
    let mut acc = Complex64::new(0.0, 0.0);
    // at k = n-1 the product is the single factor j = n
    let mut k = n - 1;
    loop {
        let rj = r(k + 1);
        log_f += (one - x * rj).ln() + (one - y * rj).ln();
        let rk = r(k);
        acc += log_f.exp() * (rk * rk * weight(k));
        if k == m0 {
            break;
        }
        k -= 1;
    }
    let scale = match branch(x, y, c, gamma) {
        OracleBranch::Subpolynomial => nf.powf(gamma),
        OracleBranch::Subcritical => nf,
        OracleBranch::Boundary => nf / ln_n.powi(q as i32 + 1),
    };
    Ok(acc * scale)
}
