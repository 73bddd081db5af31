//! Network and step-size inputs.

use serde::Serialize;

use crate::error::{Error, Result, Violation};
use crate::linalg::Matrix;
use crate::scalar::Real;

/// Entries below this magnitude are treated as absent edges.
pub const EDGE_EPS: f64 = 1e-14;
/// Column-sum tolerance.
pub const COLUMN_TOL: f64 = 1e-12;

/// Column-normalized block upper-triangular weight matrix.
///
/// Entry `(h, j)` is the influence of agent `h` on agent `j`, so agent `j`
/// acts with probability `sum_h w[h][j] Z[h]`.
#[derive(Clone, Debug, Serialize)]
pub struct HierarchicalNetwork<T> {
    weights: Matrix<T>,
    block_sizes: Vec<usize>,
    #[serde(skip)]
    block_of: Vec<usize>,
}

impl<T: Real> HierarchicalNetwork<T> {
    /// Checks every invariant and reports all violations at once.
    pub fn new(weights: Matrix<T>, block_sizes: Vec<usize>) -> Result<Self> {
        let violations = violations(&weights, &block_sizes);
        if !violations.is_empty() {
            return Err(Error::InvalidNetwork(violations));
        }
        let block_of = block_sizes
            .iter()
            .enumerate()
            .flat_map(|(b, &s)| std::iter::repeat_n(b, s))
            .collect();
        Ok(Self { weights, block_sizes, block_of })
    }

    pub fn from_rows(rows: &[Vec<T>], block_sizes: Vec<usize>) -> Result<Self> {
        let m = Matrix::from_rows(rows).ok_or_else(|| {
            Error::InvalidNetwork(vec![Violation::NotSquare {
                rows: rows.len(),
                cols: rows.iter().map(Vec::len).max().unwrap_or(0),
            }])
        })?;
        Self::new(m, block_sizes)
    }

    pub fn n_agents(&self) -> usize {
        self.weights.rows()
    }

    pub fn weights(&self) -> &Matrix<T> {
        &self.weights
    }

    pub fn block_sizes(&self) -> &[usize] {
        &self.block_sizes
    }

    pub fn block_of(&self, agent: usize) -> usize {
        self.block_of[agent]
    }

    /// Agent index range of block `b`.
    pub fn block_range(&self, b: usize) -> std::ops::Range<usize> {
        let start: usize = self.block_sizes[..b].iter().sum();
        start..start + self.block_sizes[b]
    }

    pub fn leading_size(&self) -> usize {
        self.block_sizes[0]
    }

    /// Action probabilities `W^T z`.
    pub fn action_probabilities(&self, z: &[T]) -> Vec<T> {
        let n = self.n_agents();
        let mut out = vec![T::zero(); n];
        for (h, &zh) in z.iter().enumerate() {
            if zh == T::zero() {
                continue;
            }
            for (j, o) in out.iter_mut().enumerate() {
                *o = *o + self.weights[(h, j)] * zh;
            }
        }
        debug_assert_eq!(out.len(), n);
        out
    }

    pub fn to_f64(&self) -> HierarchicalNetwork<f64> {
        HierarchicalNetwork {
            weights: self.weights.to_f64(),
            block_sizes: self.block_sizes.clone(),
            block_of: self.block_of.clone(),
        }
    }
}

/// Validates raw input, returning the network or the full violation list.
pub fn validate_network<T: Real>(
    weights: Matrix<T>,
    block_sizes: Vec<usize>,
) -> std::result::Result<HierarchicalNetwork<T>, Vec<Violation>> {
    match HierarchicalNetwork::new(weights, block_sizes) {
        Ok(net) => Ok(net),
        Err(Error::InvalidNetwork(v)) => Err(v),
        Err(_) => unreachable!("network construction only fails with violations"),
    }
}

fn violations<T: Real>(w: &Matrix<T>, block_sizes: &[usize]) -> Vec<Violation> {
    let mut out = Vec::new();
    if !w.is_square() {
        out.push(Violation::NotSquare { rows: w.rows(), cols: w.cols() });
        return out;
    }
    let n = w.rows();
    let sum: usize = block_sizes.iter().sum();
    if sum != n || n == 0 {
        out.push(Violation::BlockSizesMismatch { sum, n_agents: n });
        return out;
    }
    for (b, &s) in block_sizes.iter().enumerate() {
        if s == 0 {
            out.push(Violation::EmptyBlock { block: b });
        }
    }
    if !out.is_empty() {
        return out;
    }
    let block_of: Vec<usize> = block_sizes
        .iter()
        .enumerate()
        .flat_map(|(b, &s)| std::iter::repeat_n(b, s))
        .collect();
    let edge = T::lit(EDGE_EPS);

    for h in 0..n {
        for j in 0..n {
            let x = w[(h, j)];
            if !x.is_finite() {
                out.push(Violation::NonFinite { h, j });
            } else if x < T::zero() {
                out.push(Violation::NegativeWeight { h, j });
            }
        }
    }
    let tol = T::tol(COLUMN_TOL);
    for j in 0..n {
        let s: T = (0..n).map(|h| w[(h, j)]).sum();
        if !((s - T::one()).abs() <= tol) {
            out.push(Violation::NonNormalizedColumn { j });
        }
    }
    for h in 0..n {
        for j in 0..n {
            if block_of[h] > block_of[j] && w[(h, j)].abs() >= edge {
                out.push(Violation::LowerBlockNonZero { h, j });
            }
        }
    }

    let mut start = 0;
    for (b, &s) in block_sizes.iter().enumerate() {
        let block = w.block(start, start + s, start, start + s);
        if b == 0 {
            if !irreducibility_check(&block) {
                out.push(Violation::LeadingBlockReducible);
            }
        } else {
            let norm = (0..s)
                .map(|j| (0..s).map(|h| block[(h, j)].abs()).sum::<T>())
                .fold(T::zero(), T::max);
            if !(norm < T::one()) {
                out.push(Violation::DownstreamNormTooLarge { block: b });
            }
        }
        start += s;
    }
    out
}

/// Strong connectivity of the digraph with an edge `h -> j` whenever
/// entry `(h, j)` is positive (magnitude at least 1e-14).
pub fn irreducibility_check<T: Real>(block: &Matrix<T>) -> bool {
    assert!(block.is_square(), "irreducibility_check needs a square matrix");
    let n = block.rows();
    if n == 0 {
        return false;
    }
    let edge = T::lit(EDGE_EPS);
    let has = |h: usize, j: usize| block[(h, j)].abs() >= edge;
    let sweep = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for u in 0..n {
                let e = if forward { has(v, u) } else { has(u, v) };
                if e && !seen[u] {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    sweep(true) && sweep(false)
}

/// `r(n) = min(c n^-gamma, r_max)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StepSizeSchedule<T> {
    gamma: T,
    c: T,
    r_max: T,
}

pub const DEFAULT_R_MAX: f64 = 0.99;

impl<T: Real> StepSizeSchedule<T> {
    pub fn new(gamma: T, c: T, r_max: T) -> Result<Self> {
        let half = T::lit(0.5);
        if !(gamma > half && gamma <= T::one()) {
            return Err(Error::InvalidParameter(format!("gamma = {gamma} must lie in (1/2, 1]")));
        }
        if !(c > T::zero() && c.is_finite()) {
            return Err(Error::InvalidParameter(format!("c = {c} must be positive")));
        }
        if !(r_max > T::zero() && r_max < T::one()) {
            return Err(Error::InvalidParameter(format!("r_max = {r_max} must lie in (0, 1)")));
        }
        Ok(Self { gamma, c, r_max })
    }

    pub fn with_default_clip(gamma: T, c: T) -> Result<Self> {
        Self::new(gamma, c, T::lit(DEFAULT_R_MAX))
    }

    pub fn gamma(&self) -> T {
        self.gamma
    }

    pub fn c(&self) -> T {
        self.c
    }

    pub fn r_max(&self) -> T {
        self.r_max
    }

    pub fn is_critical(&self) -> bool {
        self.gamma == T::one()
    }

    /// Step size used for the transition into state `n` (n >= 1).
    pub fn r(&self, n: u64) -> T {
        assert!(n >= 1, "step sizes are indexed from 1");
        let nf = T::from_u64(n).expect("step index representable");
        let raw = if self.is_critical() { self.c / nf } else { self.c * nf.powf(-self.gamma) };
        raw.min(self.r_max)
    }

    /// First index from which the clip is inactive: ceil((c / r_max)^(1/gamma)).
    pub fn clip_point(&self) -> u64 {
        (self.c / self.r_max)
            .powf(T::one() / self.gamma)
            .ceil()
            .to_u64()
            .unwrap_or(u64::MAX)
            .max(1)
    }
}

pub fn step_size<T: Real>(schedule: &StepSizeSchedule<T>, n: u64) -> T {
    schedule.r(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sim(alpha: f64, beta: f64) -> Vec<Vec<f64>> {
        let d = (1.0 - beta) / 2.0;
        vec![
            vec![alpha, 1.0 - alpha, d, d],
            vec![1.0 - alpha, alpha, d, d],
            vec![0.0, 0.0, beta, 0.0],
            vec![0.0, 0.0, 0.0, beta],
        ]
    }

    #[test]
    fn accepts_sim_network() {
        let net = HierarchicalNetwork::from_rows(&sim(0.8, 0.5), vec![2, 2]).unwrap();
        assert_eq!(net.n_agents(), 4);
        assert_eq!(net.block_range(1), 2..4);
        assert_eq!(net.block_of(3), 1);
    }

    #[test]
    fn single_agent() {
        assert!(HierarchicalNetwork::from_rows(&[vec![1.0]], vec![1]).is_ok());
    }

    #[test]
    fn reports_column() {
        let w = Matrix::from_rows(&[vec![0.5, 0.5], vec![0.4, 0.5]]).unwrap();
        let v = validate_network(w, vec![2]).unwrap_err();
        assert_eq!(v, vec![Violation::NonNormalizedColumn { j: 0 }]);
    }

    #[test]
    fn reports_every_violation() {
        let w = Matrix::from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ])
        .unwrap();
        let v = validate_network(w, vec![2, 1]).unwrap_err();
        assert!(v.contains(&Violation::LeadingBlockReducible));
        assert!(v.contains(&Violation::DownstreamNormTooLarge { block: 1 }));

        let mut rows = sim(0.8, 0.5);
        rows[2][0] = 0.1;
        rows[0][0] = 0.7;
        let v = validate_network(Matrix::from_rows(&rows).unwrap(), vec![2, 2]).unwrap_err();
        assert_eq!(v, vec![Violation::LowerBlockNonZero { h: 2, j: 0 }]);
    }

    #[test]
    fn block_sizes_checked() {
        let w = Matrix::<f64>::identity(2);
        let v = validate_network(w, vec![3]).unwrap_err();
        assert!(matches!(v[0], Violation::BlockSizesMismatch { sum: 3, n_agents: 2 }));
    }

    #[test]
    fn irreducibility() {
        let a = Matrix::from_rows(&[vec![0.8, 0.2], vec![0.2, 0.8]]).unwrap();
        assert!(irreducibility_check(&a));
        assert!(!irreducibility_check(&Matrix::<f64>::identity(2)));
        assert!(irreducibility_check(&Matrix::from_rows(&[vec![0.5]]).unwrap()));
        let chain = Matrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        assert!(!irreducibility_check(&chain));
        let tiny = Matrix::from_rows(&[vec![1.0, 1e-15], vec![1e-15, 1.0]]).unwrap();
        assert!(!irreducibility_check(&tiny));
    }

    #[test]
    fn step_sizes() {
        let s = StepSizeSchedule::new(0.9, 1.0, 0.99).unwrap();
        assert!((s.r(10) - 10f64.powf(-0.9)).abs() < 1e-15);
        assert!((s.r(10) - 0.125893).abs() < 1e-6);
        assert_eq!(s.r(1), 0.99);
        let s = StepSizeSchedule::new(1.0, 0.5, 0.99).unwrap();
        assert_eq!(s.r(2), 0.25);
        assert!(StepSizeSchedule::new(0.5, 1.0, 0.99).is_err());
        assert!(StepSizeSchedule::new(0.8, -1.0, 0.99).is_err());
        assert!(StepSizeSchedule::new(0.8, 1.0, 1.0).is_err());
    }

    #[test]
    fn critical_steps_exact() {
        let s = StepSizeSchedule::new(1.0, 2.0, 0.99).unwrap();
        for n in s.clip_point()..s.clip_point() + 500 {
            // r(n) is c/n correctly rounded, so n r(n) is c up to one rounding.
            assert!((n as f64 * s.r(n) - 2.0).abs() <= 2.0 * f64::EPSILON);
        }
    }

    #[test]
    fn f32_schedule() {
        let s = StepSizeSchedule::<f32>::new(0.9, 1.0, 0.99).unwrap();
        assert!((s.r(10) - 0.125893).abs() < 1e-6);
    }
}
