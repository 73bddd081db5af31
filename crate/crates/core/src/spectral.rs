//! Jordan data of the weight matrix.
//!
//! Rows of `P~` are generalized left eigenvectors and columns of `Q~` the
//! matching right ones, with `P~ Q~ = I` and `W = Q~ J~ P~`. Index 0 is the
//! dominant eigenvalue 1. Every chain is stored head first: for a chain
//! occupying columns `a..a+k`, `W q_a = lambda q_a` and
//! `W q_{a+i} = lambda q_{a+i} + q_{a+i-1}`.
//!
//! All products between eigenvectors are bilinear (`x^T y`, no conjugate).

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::model::HierarchicalNetwork;
use crate::scalar::{cre, Real, C};

/// Tolerance on the structural identities.
pub const IDENTITY_TOL: f64 = 1e-10;
/// Tolerance on the regime boundary `tau = 1 - 1/(2c)`.
pub const REGIME_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Regime {
    Subpolynomial,
    CriticalSubcritical,
    CriticalBoundary,
    Unsupported,
}

impl Regime {
    pub fn is_supported(self) -> bool {
        self != Regime::Unsupported
    }
}

#[derive(Clone, Debug)]
pub struct SpectralDecomposition<T: Real> {
    eigenvalues: Vec<C<T>>,
    block_orders: Vec<usize>,
    cumulative: Vec<usize>,
    p_tilde: Matrix<C<T>>,
    q_tilde: Matrix<C<T>>,
}

impl<T: Real> SpectralDecomposition<T> {
    /// Builds without checks. Callers must have verified the identities.
    fn raw(eigenvalues: Vec<C<T>>, block_orders: Vec<usize>, p: Matrix<C<T>>, q: Matrix<C<T>>) -> Self {
        let mut cumulative = vec![0];
        for &r in &block_orders {
            cumulative.push(cumulative.last().unwrap() + r);
        }
        Self { eigenvalues, block_orders, cumulative, p_tilde: p, q_tilde: q }
    }

    pub fn n(&self) -> usize {
        self.q_tilde.rows()
    }

    /// Number of non-dominant Jordan blocks.
    pub fn n_blocks(&self) -> usize {
        self.block_orders.len()
    }

    /// Dominant eigenvalue first, then one entry per Jordan block.
    pub fn eigenvalues(&self) -> &[C<T>] {
        &self.eigenvalues
    }

    /// Eigenvalue of non-dominant block `u` (0-based).
    pub fn lambda(&self, u: usize) -> C<T> {
        self.eigenvalues[u + 1]
    }

    pub fn block_orders(&self) -> &[usize] {
        &self.block_orders
    }

    /// `I_0 = 0, I_t = rho_1 + ... + rho_t`.
    pub fn cumulative_indices(&self) -> &[usize] {
        &self.cumulative
    }

    pub fn left_matrix(&self) -> &Matrix<C<T>> {
        &self.p_tilde
    }

    pub fn right_matrix(&self) -> &Matrix<C<T>> {
        &self.q_tilde
    }

    pub fn tau(&self) -> Option<T> {
        self.eigenvalues[1..].iter().map(|z| z.re).reduce(T::max)
    }

    pub fn tau_star(&self) -> Option<T> {
        self.eigenvalues[1..].iter().map(|z| z.re).reduce(T::min)
    }

    /// Largest block order among eigenvalues whose real part equals tau.
    pub fn rho(&self) -> usize {
        let Some(tau) = self.tau() else { return 0 };
        let tol = T::tol(REGIME_TOL);
        (0..self.n_blocks())
            .filter(|&u| (self.lambda(u).re - tau).abs() <= tol)
            .map(|u| self.block_orders[u])
            .max()
            .unwrap_or(0)
    }

    /// Block and offset from the chain head of reduced index `a` in `0..N-1`.
    pub fn chain_position(&self, a: usize) -> (usize, usize) {
        let u = self.cumulative.partition_point(|&c| c <= a) - 1;
        (u, a - self.cumulative[u])
    }

    /// Column `k` of `Q~`.
    pub fn q(&self, k: usize) -> Vec<C<T>> {
        self.q_tilde.col(k)
    }

    /// Row `k` of `P~`.
    pub fn p(&self, k: usize) -> Vec<C<T>> {
        self.p_tilde.row(k).to_vec()
    }

    /// Real dominant right eigenvector `q_1`.
    pub fn q1(&self) -> Vec<T> {
        self.q(0).into_iter().map(|z| z.re).collect()
    }

    pub fn q1_norm_sq(&self) -> T {
        self.q1().iter().map(|&x| x * x).sum()
    }

    /// `P`: N x (N-1), the transposed non-dominant rows of `P~`.
    pub fn p_matrix(&self) -> Matrix<C<T>> {
        let n = self.n();
        Matrix::from_fn(n, n - 1, |i, a| self.p_tilde[(a + 1, i)])
    }

    /// `Q`: N x (N-1), the non-dominant columns of `Q~`.
    pub fn q_matrix(&self) -> Matrix<C<T>> {
        let n = self.n();
        Matrix::from_fn(n, n - 1, |i, a| self.q_tilde[(i, a + 1)])
    }

    /// `P~^T`: columns are the left eigenvectors.
    pub fn p_tilde_t(&self) -> Matrix<C<T>> {
        self.p_tilde.transpose()
    }

    /// Non-dominant Jordan matrix `J`, (N-1) x (N-1).
    pub fn jordan_reduced(&self) -> Matrix<C<T>> {
        let m = self.n() - 1;
        let mut j = Matrix::zeros(m, m);
        for a in 0..m {
            let (u, pos) = self.chain_position(a);
            j[(a, a)] = self.lambda(u);
            if pos > 0 {
                j[(a - 1, a)] = cre(T::one());
            }
        }
        j
    }

    /// Full `J~ = Diag(1, J)`.
    pub fn jordan_full(&self) -> Matrix<C<T>> {
        let n = self.n();
        let jr = self.jordan_reduced();
        Matrix::from_fn(n, n, |i, k| match (i, k) {
            (0, 0) => cre(T::one()),
            (0, _) | (_, 0) => cre(T::zero()),
            _ => jr[(i - 1, k - 1)],
        })
    }

    /// `|P~ Q~ - I|_max`.
    pub fn identity_residual(&self) -> T {
        let n = self.n();
        self.p_tilde.matmul(&self.q_tilde).max_norm_diff(&Matrix::identity(n))
    }

    /// `|P~ W Q~ - J~|_max`.
    pub fn jordan_residual(&self, w: &Matrix<T>) -> T {
        self.p_tilde
            .matmul(&w.to_complex())
            .matmul(&self.q_tilde)
            .max_norm_diff(&self.jordan_full())
    }

    /// `|q_1 p_1^T + Q J P^T - W|_max`.
    pub fn reconstruction_residual(&self, w: &Matrix<T>) -> T {
        self.reconstruct().max_norm_diff(&w.to_complex())
    }

    /// `|q_1 p_1^T + Q P^T - I|_max`.
    pub fn completeness_residual(&self) -> T {
        let n = self.n();
        let q1 = self.q(0);
        let p1 = self.p(0);
        let outer = Matrix::from_fn(n, n, |i, k| q1[i] * p1[k]);
        let qp = self.q_matrix().matmul(&self.p_matrix().transpose());
        (&outer + &qp).max_norm_diff(&Matrix::identity(n))
    }

    pub fn reconstruct(&self) -> Matrix<C<T>> {
        let n = self.n();
        let q1 = self.q(0);
        let p1 = self.p(0);
        let outer = Matrix::from_fn(n, n, |i, k| q1[i] * p1[k]);
        let qjp = self
            .q_matrix()
            .matmul(&self.jordan_reduced())
            .matmul(&self.p_matrix().transpose());
        &outer + &qjp
    }

    /// Largest residual among the structural identities.
    pub fn max_residual(&self, w: &Matrix<T>) -> T {
        self.identity_residual()
            .max(self.jordan_residual(w))
            .max(self.reconstruction_residual(w))
            .max(self.completeness_residual())
    }

    /// `Z~ = N^{-1/2} q_1^T z`.
    pub fn z_tilde(&self, z: &[T]) -> T {
        let q1 = self.q1();
        dot(&q1, z) / T::from_usize_lossy(self.n()).sqrt()
    }

    /// `Z^ = P Q^T z`, real part.
    pub fn z_hat(&self, z: &[T]) -> Vec<T> {
        let zc: Vec<C<T>> = z.iter().map(|&x| cre(x)).collect();
        let coords = self.q_matrix().transpose().mul_vec(&zc);
        self.p_matrix().mul_vec(&coords).into_iter().map(|v| v.re).collect()
    }

    /// Spectral coordinates `Q^T z` (length N-1, complex).
    pub fn hat_coordinates(&self, z: &[T]) -> Vec<C<T>> {
        let zc: Vec<C<T>> = z.iter().map(|&x| cre(x)).collect();
        self.q_matrix().transpose().mul_vec(&zc)
    }

    pub fn to_f64(&self) -> SpectralDecomposition<f64> {
        let cf = |z: C<T>| C::new(z.re.as_f64(), z.im.as_f64());
        SpectralDecomposition::raw(
            self.eigenvalues.iter().copied().map(cf).collect(),
            self.block_orders.clone(),
            self.p_tilde.map(cf),
            self.q_tilde.map(cf),
        )
    }
}

/// Validates user-supplied Jordan data for `network`.
///
/// The dominant pair is rescaled so that `p_1 = N^{-1/2} 1` and
/// `p_1^T q_1 = 1` is preserved.
pub fn from_user_spectral<T: Real>(
    network: &HierarchicalNetwork<T>,
    eigenvalues: Vec<C<T>>,
    block_orders: Vec<usize>,
    left: Matrix<C<T>>,
    right: Matrix<C<T>>,
) -> Result<SpectralDecomposition<T>> {
    let n = network.n_agents();
    for m in [&left, &right] {
        if m.rows() != n || m.cols() != n {
            return Err(Error::DimensionMismatch { expected: n, found: m.rows().max(m.cols()) });
        }
    }
    if eigenvalues.len() != block_orders.len() + 1 {
        return Err(Error::DimensionMismatch {
            expected: block_orders.len() + 1,
            found: eigenvalues.len(),
        });
    }
    let total: usize = block_orders.iter().sum();
    if total != n - 1 || block_orders.contains(&0) {
        return Err(Error::DimensionMismatch { expected: n - 1, found: total });
    }
    let tol = T::tol(IDENTITY_TOL);
    if (eigenvalues[0] - cre(T::one())).norm() > tol {
        return Err(Error::JordanViolation { residual: (eigenvalues[0] - cre(T::one())).norm().as_f64() });
    }
    for (t, z) in eigenvalues.iter().enumerate().skip(1) {
        if !(z.re < T::one()) {
            return Err(Error::DominantNotSimple { index: t });
        }
    }

    let mut left = left;
    let mut right = right;
    let kappa = left[(0, 0)];
    let scale = kappa.norm().max(T::min_positive_value());
    let uniform = (0..n).all(|k| (left[(0, k)] - kappa).norm() <= tol * scale);
    if kappa.norm() <= T::min_positive_value() || !uniform {
        return Err(Error::NormalizationImpossible);
    }
    let root_n = T::from_usize_lossy(n).sqrt();
    let target = cre(T::one() / root_n);
    for k in 0..n {
        left[(0, k)] = target;
        right[(k, 0)] = right[(k, 0)] * kappa * cre(root_n);
    }

    let s = SpectralDecomposition::raw(eigenvalues, block_orders, left, right);
    let id = s.identity_residual();
    if !(id < tol) {
        return Err(Error::IdentityViolation { residual: id.as_f64() });
    }
    let jr = s.jordan_residual(network.weights());
    if !(jr < tol) {
        return Err(Error::JordanViolation { residual: jr.as_f64() });
    }
    let rr = s.reconstruction_residual(network.weights());
    if !(rr < tol) {
        return Err(Error::JordanViolation { residual: rr.as_f64() });
    }
    Ok(s)
}

/// Top-down cascade: agent 1 is stubborn, agent `i` listens to `i-1`.
pub fn build_example1<T: Real>(
    n: usize,
    alpha: T,
) -> Result<(HierarchicalNetwork<T>, SpectralDecomposition<T>)> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!("N = {n} must be at least 2")));
    }
    if !(alpha > T::zero() && alpha < T::one()) {
        return Err(Error::InvalidParameter(format!("alpha = {alpha} must lie in (0, 1)")));
    }
    let w = Matrix::from_fn(n, n, |i, j| {
        if i == 0 && j == 0 {
            T::one()
        } else if i == j {
            T::one() - alpha
        } else if j == i + 1 {
            alpha
        } else {
            T::zero()
        }
    });
    let net = HierarchicalNetwork::new(w, vec![1; n])?;

    let root_n = T::from_usize_lossy(n).sqrt();
    let mut q = Matrix::zeros(n, n);
    let mut p = Matrix::zeros(n, n);
    q[(0, 0)] = cre(root_n);
    for k in 0..n {
        p[(0, k)] = cre(T::one() / root_n);
    }
    // Column h (0-based, h >= 1) is q_{h+1} = sqrt(N) alpha^{1-h} (e_1 - e_{h+1}).
    for h in 1..n {
        let a = alpha.powi(1 - h as i32);
        q[(0, h)] = cre(root_n * a);
        q[(h, h)] = cre(-root_n * a);
        p[(h, h)] = cre(-alpha.powi(h as i32 - 1) / root_n);
    }
    let eig = vec![cre(T::one()), cre(T::one() - alpha)];
    let spec = SpectralDecomposition::raw(eig, vec![n - 1], p, q);
    Ok((net, spec))
}

/// Leading group of `n1` agents with self-weight `alpha`, `n2` followers
/// with self-weight `beta`.
pub fn build_example2<T: Real>(
    n1: usize,
    n2: usize,
    alpha: T,
    beta: T,
) -> Result<(HierarchicalNetwork<T>, SpectralDecomposition<T>)> {
    if n1 < 2 || n2 < 1 {
        return Err(Error::InvalidParameter(format!("need N1 >= 2 and N2 >= 1, got ({n1}, {n2})")));
    }
    if !(T::zero() < beta && beta < alpha && alpha < T::one()) {
        return Err(Error::InvalidParameter(format!(
            "need 0 < beta < alpha < 1, got alpha = {alpha}, beta = {beta}"
        )));
    }
    two_group(n1, n2, alpha, beta)
}

/// The 4-agent network of the simulation study.
pub fn build_sim_network<T: Real>(
    alpha: T,
    beta: T,
) -> Result<(HierarchicalNetwork<T>, SpectralDecomposition<T>)> {
    for (name, x) in [("alpha", alpha), ("beta", beta)] {
        if !(x > T::zero() && x < T::one()) {
            return Err(Error::InvalidParameter(format!("{name} = {x} must lie in (0, 1)")));
        }
    }
    // [[a, 1-a], [1-a, a]] is ((1-a')/2) 11^T + a' I with a' = 2a - 1.
    let two = T::lit(2.0);
    let (net, spec) = two_group(2, 2, two * alpha - T::one(), beta)?;
    let w = net.weights();
    let res = spec.max_residual(w);
    if !(res < T::tol(IDENTITY_TOL)) {
        return Err(Error::DeficientEigenbasis(format!("residual {:e}", res.as_f64())));
    }
    Ok((net, spec))
}

fn two_group<T: Real>(
    n1: usize,
    n2: usize,
    a: T,
    b: T,
) -> Result<(HierarchicalNetwork<T>, SpectralDecomposition<T>)> {
    let n = n1 + n2;
    let n1f = T::from_usize_lossy(n1);
    let w = Matrix::from_fn(n, n, |i, j| {
        if i < n1 && j < n1 {
            (T::one() - a) / n1f + if i == j { a } else { T::zero() }
        } else if i < n1 {
            (T::one() - b) / n1f
        } else if i == j {
            b
        } else {
            T::zero()
        }
    });
    let net = HierarchicalNetwork::new(w, vec![n1, n2])?;

    let root_n = T::from_usize_lossy(n).sqrt();
    let mut p = Matrix::zeros(n, n);
    let mut q = Matrix::zeros(n, n);
    for k in 0..n {
        p[(0, k)] = cre(T::one() / root_n);
    }
    for i in 0..n1 {
        q[(i, 0)] = cre(root_n / n1f);
    }
    for h in 1..n1 {
        for i in 0..n1 {
            p[(h, i)] = cre(T::one() / root_n);
        }
        p[(h, h)] = cre((T::one() - n1f) / root_n);
        q[(0, h)] = cre(root_n / n1f);
        q[(h, h)] = cre(-root_n / n1f);
    }
    for h in n1..n {
        p[(h, h)] = cre(n1f / root_n);
        for i in 0..n1 {
            q[(i, h)] = cre(-root_n / (n1f * n1f));
        }
        q[(h, h)] = cre(root_n / n1f);
    }
    let mut eig = vec![cre(T::one())];
    eig.extend(std::iter::repeat_n(cre(a), n1 - 1));
    eig.extend(std::iter::repeat_n(cre(b), n2));
    let spec = SpectralDecomposition::raw(eig, vec![1; n - 1], p, q);
    Ok((net, spec))
}

/// Trivial decomposition of the single-agent network.
pub fn build_single_agent<T: Real>() -> (HierarchicalNetwork<T>, SpectralDecomposition<T>) {
    let net = HierarchicalNetwork::new(Matrix::identity(1), vec![1]).expect("identity is valid");
    let one = Matrix::identity(1);
    (net, SpectralDecomposition::raw(vec![cre(T::one())], vec![], one.clone(), one))
}

pub fn classify_regime<T: Real>(gamma: T, c: T, spectral: &SpectralDecomposition<T>) -> Regime {
    if gamma < T::one() {
        return Regime::Subpolynomial;
    }
    let Some(tau) = spectral.tau() else {
        return Regime::CriticalSubcritical;
    };
    classify_tau(tau, c)
}

/// Regime at `gamma = 1` from `tau`.
pub fn classify_tau<T: Real>(tau: T, c: T) -> Regime {
    let edge = T::one() - T::one() / (T::lit(2.0) * c);
    let tol = T::tol(REGIME_TOL);
    if (tau - edge).abs() <= tol {
        Regime::CriticalBoundary
    } else if tau < edge {
        Regime::CriticalSubcritical
    } else {
        Regime::Unsupported
    }
}

/// `p_{i,j}` (row i of P minus row j of P) and `(0, p_{i,j})`.
pub fn pairwise_projection<T: Real>(
    spectral: &SpectralDecomposition<T>,
    i: usize,
    j: usize,
) -> Result<(Vec<C<T>>, Vec<C<T>>)> {
    if i == j {
        return Err(Error::SameAgent(i));
    }
    let n = spectral.n();
    if i >= n || j >= n {
        return Err(Error::DimensionMismatch { expected: n, found: i.max(j) + 1 });
    }
    let pt = spectral.left_matrix();
    let pij: Vec<C<T>> = (1..n).map(|a| pt[(a, i)] - pt[(a, j)]).collect();
    let mut tilde = vec![cre(T::zero())];
    tilde.extend_from_slice(&pij);
    Ok((pij, tilde))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check<T: Real>(net: &HierarchicalNetwork<T>, s: &SpectralDecomposition<T>, tol: f64) {
        let w = net.weights();
        assert!(s.identity_residual().as_f64() < tol, "identity {}", s.identity_residual());
        assert!(s.jordan_residual(w).as_f64() < tol, "jordan {}", s.jordan_residual(w));
        assert!(s.reconstruction_residual(w).as_f64() < tol);
        assert!(s.completeness_residual().as_f64() < tol);
        let root = T::from_usize_lossy(s.n()).sqrt();
        for k in 0..s.n() {
            assert_eq!(s.left_matrix()[(0, k)], cre(T::one() / root));
        }
    }

    #[test]
    fn example1_identities() {
        for n in [2, 3, 6] {
            for a in [0.3, 0.5, 0.9] {
                let (net, s) = build_example1::<f64>(n, a).unwrap();
                check(&net, &s, 1e-10);
                assert_eq!(s.block_orders(), &[n - 1]);
                assert_eq!(s.rho(), n - 1);
                assert!((s.tau().unwrap() - (1.0 - a)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn example1_chain_by_hand() {
        let (net, s) = build_example1::<f64>(3, 0.5).unwrap();
        let w = net.weights().to_complex();
        assert_eq!(s.q1(), vec![3f64.sqrt(), 0.0, 0.0]);
        let q2 = s.q(1);
        let q3 = s.q(2);
        let lam = C::new(0.5, 0.0);
        let wq2 = w.mul_vec(&q2);
        let wq3 = w.mul_vec(&q3);
        for i in 0..3 {
            assert!((wq2[i] - lam * q2[i]).norm() < 1e-14);
            assert!((wq3[i] - lam * q3[i] - q2[i]).norm() < 1e-14);
        }
    }

    #[test]
    fn example2_vectors() {
        let (net, s) = build_example2::<f64>(2, 2, 0.6, 0.3).unwrap();
        check(&net, &s, 1e-10);
        let p1q1 = dot(&s.p(0), &s.q(0));
        assert!((p1q1.re - 1.0).abs() < 1e-15);
        let p2: Vec<f64> = s.p(1).iter().map(|z| z.re).collect();
        assert_eq!(p2, vec![0.5, -0.5, 0.0, 0.0]);
        let q2: Vec<f64> = s.q(1).iter().map(|z| z.re).collect();
        assert_eq!(q2, vec![1.0, -1.0, 0.0, 0.0]);
        assert_eq!(s.rho(), 1);
        assert!((s.tau().unwrap() - 0.6).abs() < 1e-15);
        assert!(build_example2::<f64>(2, 2, 0.3, 0.6).is_err());
        let (net, s) = build_example2::<f64>(3, 2, 0.7, 0.2).unwrap();
        check(&net, &s, 1e-10);
    }

    #[test]
    fn sim_network() {
        for a in [0.2, 0.8, 0.75] {
            let (net, s) = build_sim_network::<f64>(a, 0.5).unwrap();
            check(&net, &s, 1e-10);
            assert_eq!(s.q1(), vec![1.0, 1.0, 0.0, 0.0]);
        }
        let (_, s) = build_sim_network::<f64>(0.8, 0.5).unwrap();
        let mut re: Vec<f64> = s.eigenvalues().iter().map(|z| z.re).collect();
        re.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let want = [1.0, 0.6, 0.5, 0.5];
        for (x, y) in re.iter().zip(want) {
            assert!((x - y).abs() < 1e-14);
        }
        assert!((s.tau().unwrap() - 0.6).abs() < 1e-14);
    }

    #[test]
    fn f32_constructors() {
        let (net, s) = build_example1::<f32>(3, 0.5).unwrap();
        check(&net, &s, 1e-5);
        let (net, s) = build_sim_network::<f32>(0.8, 0.5).unwrap();
        check(&net, &s, 1e-5);
    }

    #[test]
    fn user_spectral_round_trip() {
        let (net, s) = build_example1::<f64>(4, 0.3).unwrap();
        let back = from_user_spectral(
            &net,
            s.eigenvalues().to_vec(),
            s.block_orders().to_vec(),
            s.left_matrix().clone(),
            s.right_matrix().clone(),
        )
        .unwrap();
        assert!(back.right_matrix().max_norm_diff(s.right_matrix()) < 1e-14);
    }

    #[test]
    fn user_spectral_rescales_dominant_pair() {
        let (net, s) = build_sim_network::<f64>(0.8, 0.5).unwrap();
        let mut p = s.left_matrix().clone();
        let mut q = s.right_matrix().clone();
        for k in 0..4 {
            p[(0, k)] *= C::new(0.5, 0.0);
            q[(k, 0)] *= C::new(2.0, 0.0);
        }
        let back = from_user_spectral(&net, s.eigenvalues().to_vec(), vec![1, 1, 1], p, q).unwrap();
        assert!(back.right_matrix().max_norm_diff(s.right_matrix()) < 1e-14);
        assert!(back.left_matrix().max_norm_diff(s.left_matrix()) < 1e-14);
    }

    #[test]
    fn user_spectral_rejects_swapped_chain() {
        let (net, s) = build_example1::<f64>(4, 0.5).unwrap();
        let swap = |m: &Matrix<C<f64>>, rows: bool| {
            let mut out = m.clone();
            for k in 0..4 {
                if rows {
                    out[(1, k)] = m[(2, k)];
                    out[(2, k)] = m[(1, k)];
                } else {
                    out[(k, 1)] = m[(k, 2)];
                    out[(k, 2)] = m[(k, 1)];
                }
            }
            out
        };
        let err = from_user_spectral(
            &net,
            s.eigenvalues().to_vec(),
            vec![3],
            swap(s.left_matrix(), true),
            swap(s.right_matrix(), false),
        )
        .unwrap_err();
        assert!(matches!(err, Error::JordanViolation { .. }));
    }

    #[test]
    fn user_spectral_rejects_non_uniform_p1() {
        let (net, s) = build_sim_network::<f64>(0.8, 0.5).unwrap();
        let mut p = s.left_matrix().clone();
        p[(0, 3)] = C::new(0.1, 0.0);
        let err = from_user_spectral(&net, s.eigenvalues().to_vec(), vec![1, 1, 1], p, s.right_matrix().clone())
            .unwrap_err();
        assert!(matches!(err, Error::NormalizationImpossible));
    }

    #[test]
    fn user_spectral_rejects_broken_identity() {
        let (net, s) = build_sim_network::<f64>(0.8, 0.5).unwrap();
        let mut q = s.right_matrix().clone();
        q[(0, 1)] *= C::new(1.5, 0.0);
        let err = from_user_spectral(&net, s.eigenvalues().to_vec(), vec![1, 1, 1], s.left_matrix().clone(), q)
            .unwrap_err();
        assert!(matches!(err, Error::IdentityViolation { .. }));
    }

    #[test]
    fn regimes() {
        let (_, s) = build_sim_network::<f64>(0.75, 0.5).unwrap();
        assert_eq!(classify_regime(0.9, 1.0, &s), Regime::Subpolynomial);
        assert_eq!(classify_regime(1.0, 1.0, &s), Regime::CriticalBoundary);
        assert_eq!(classify_tau(0.6, 2.0), Regime::CriticalSubcritical);
        assert_eq!(classify_tau(0.6, 1.0), Regime::Unsupported);
        let (_, single) = build_single_agent::<f64>();
        assert_eq!(classify_regime(1.0, 0.1, &single), Regime::CriticalSubcritical);
    }

    #[test]
    fn chain_positions() {
        let (_, s) = build_example1::<f64>(4, 0.5).unwrap();
        assert_eq!(s.chain_position(0), (0, 0));
        assert_eq!(s.chain_position(2), (0, 2));
        let (_, s) = build_example2::<f64>(2, 2, 0.6, 0.3).unwrap();
        assert_eq!(s.chain_position(2), (2, 0));
    }

    #[test]
    fn pairwise() {
        let (_, s) = build_example2::<f64>(2, 2, 0.6, 0.3).unwrap();
        assert!(pairwise_projection(&s, 1, 1).is_err());
        let (a, at) = pairwise_projection(&s, 0, 1).unwrap();
        let (b, _) = pairwise_projection(&s, 1, 0).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(*x, -*y);
        }
        assert_eq!(at.len(), 4);
        // beta coordinates are the last two
        assert_eq!(a[1], cre(0.0));
        assert_eq!(a[2], cre(0.0));
        assert!(a[0].norm() > 0.5);
    }

    #[test]
    fn projections_of_synchronized_state() {
        let (_, s) = build_sim_network::<f64>(0.8, 0.5).unwrap();
        let z = [0.37; 4];
        assert!((s.z_tilde(&z) - 0.37).abs() < 1e-15);
        assert!(s.z_hat(&z).iter().all(|x| x.abs() < 1e-15));
        assert!((s.z_tilde(&[1.0, 0.0, 0.0, 0.0]) - 0.5).abs() < 1e-15);
    }
}
