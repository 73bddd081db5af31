//! Finite sums `N1..N4`, products `D1, D2` and the combinator `H` used by
//! the empirical-mean covariance blocks.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::{binomial, cpowi, cre, factorial, Real, C};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum AuxKind {
    N1,
    N2,
    N3,
    N4,
    D1,
    D2,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AuxInputs<T: Real> {
    pub k: usize,
    pub m: usize,
    pub la: C<T>,
    pub lb: C<T>,
    pub c: T,
    pub c1: C<T>,
    pub c2: C<T>,
    pub c3: C<T>,
}

impl<T: Real> AuxInputs<T> {
    pub fn new(k: usize, m: usize, la: C<T>, lb: C<T>, c: T) -> Self {
        let zero = cre(T::zero());
        Self { k, m, la, lb, c, c1: zero, c2: zero, c3: zero }
    }

    pub fn with_constants(mut self, c1: C<T>, c2: C<T>, c3: C<T>) -> Self {
        self.c1 = c1;
        self.c2 = c2;
        self.c3 = c3;
        self
    }
}

fn cl<T: Real>(c: T, l: C<T>) -> C<T> {
    (cre(T::one()) - l) * c
}

/// `sum_{q=0}^{k-m} [c(1-lb)]^q`; zero when `m > k`.
pub fn n1<T: Real>(k: usize, m: usize, lb: C<T>, c: T) -> C<T> {
    if m > k {
        return cre(T::zero());
    }
    let base = cl(c, lb);
    let mut acc = cre(T::zero());
    let mut pow = cre(T::one());
    for _ in 0..=(k - m) {
        acc = acc + pow;
        pow = pow * base;
    }
    acc
}

/// `sum_{q=0}^{k} C(k+1, q) [c(1-la)]^q [c(1-lb)-1]^{k-q}`.
pub fn n2<T: Real>(k: usize, la: C<T>, lb: C<T>, c: T) -> C<T> {
    let a = cl(c, la);
    let b = cl(c, lb) - cre(T::one());
    (0..=k).fold(cre(T::zero()), |acc, q| {
        acc + cpowi(a, q) * cpowi(b, k - q) * binomial::<T>(k + 1, q)
    })
}

/// `[c(1-la)]^{k+1}`.
pub fn n3<T: Real>(k: usize, la: C<T>, c: T) -> C<T> {
    cpowi(cl(c, la), k + 1)
}

/// `sum_{q=0}^{k} [c(1-la)-1]^{k-q}`.
pub fn n4<T: Real>(k: usize, la: C<T>, c: T) -> C<T> {
    let b = cl(c, la) - cre(T::one());
    (0..=k).fold(cre(T::zero()), |acc, q| acc + cpowi(b, k - q))
}

/// `[c(1-la)]^{k+1} [c(1-lb)]^{k+1-m}`. The second exponent must be
/// non-negative (`m <= k+1`).
pub fn d1<T: Real>(k: usize, m: usize, la: C<T>, lb: C<T>, c: T) -> C<T> {
    assert!(m <= k + 1, "D1 needs m <= k+1");
    cpowi(cl(c, la), k + 1) * cpowi(cl(c, lb), k + 1 - m)
}

/// `D1 [-1 + c(2 - la - lb)]^{k+1}`.
pub fn d2<T: Real>(k: usize, m: usize, la: C<T>, lb: C<T>, c: T) -> C<T> {
    let e = cre(T::lit(2.0)) - la - lb;
    d1(k, m, la, lb, c) * cpowi(e * c - cre(T::one()), k + 1)
}

pub fn aux_n_d<T: Real>(kind: AuxKind, x: &AuxInputs<T>) -> C<T> {
    match kind {
        AuxKind::N1 => n1(x.k, x.m, x.lb, x.c),
        AuxKind::N2 => n2(x.k, x.la, x.lb, x.c),
        AuxKind::N3 => n3(x.k, x.la, x.c),
        AuxKind::N4 => n4(x.k, x.la, x.c),
        AuxKind::D1 => d1(x.k, x.m, x.la, x.lb, x.c),
        AuxKind::D2 => d2(x.k, x.m, x.la, x.lb, x.c),
    }
}

pub(crate) fn nonzero<T: Real>(d: C<T>, k: usize, m: usize) -> Result<C<T>> {
    if d.norm() == T::zero() || !d.re.is_finite() || !d.im.is_finite() {
        Err(Error::ZeroDenominator { k, m })
    } else {
        Ok(d)
    }
}

/// `k! sum_{m=0}^{k} C(k+1, m) [c(1-la)-1]^{k-m} { C1 N1/D1 + (C2 N2 + C3 N3)/D2 }`.
pub fn aux_h<T: Real>(x: &AuxInputs<T>) -> Result<C<T>> {
    let AuxInputs { k, la, lb, c, c1, c2, c3, .. } = *x;
    let b = cl(c, la) - cre(T::one());
    let top = c2 * n2(k, la, lb, c) + c3 * n3(k, la, c);
    let mut acc = cre(T::zero());
    for m in 0..=k {
        let first = c1 * n1(k, m, lb, c) / nonzero(d1(k, m, la, lb, c), k, m)?;
        let second = top / nonzero(d2(k, m, la, lb, c), k, m)?;
        acc = acc + cpowi(b, k - m) * binomial::<T>(k + 1, m) * (first + second);
    }
    Ok(acc * factorial::<T>(k))
}

/// `H(k, la, lb, c; C1, C2, C3)` with positional arguments.
pub fn h<T: Real>(k: usize, la: C<T>, lb: C<T>, c: T, consts: [C<T>; 3]) -> Result<C<T>> {
    aux_h(&AuxInputs::new(k, 0, la, lb, c).with_constants(consts[0], consts[1], consts[2]))
}
