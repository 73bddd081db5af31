//! Property tests for the structural invariants of the model, the Jordan
//! data, the simulator and the covariance assembly.

use num_complex::Complex64;
use proptest::prelude::*;
use urnnet::asymptotics::{check_covariance, covariance_report, s_zz_spectral, subcritical_blocks};
use urnnet::linalg::Matrix;
use urnnet::model::{validate_network, HierarchicalNetwork, StepSizeSchedule};
use urnnet::simulate::{step, InitialSpec, ProcessState};
use urnnet::spectral::{
    build_example1, build_example2, build_sim_network, classify_regime, from_user_spectral, Regime,
    SpectralDecomposition,
};

fn sim_rows(alpha: f64, beta: f64) -> Vec<Vec<f64>> {
    let d = (1.0 - beta) / 2.0;
    vec![
        vec![alpha, 1.0 - alpha, d, d],
        vec![1.0 - alpha, alpha, d, d],
        vec![0.0, 0.0, beta, 0.0],
        vec![0.0, 0.0, 0.0, beta],
    ]
}

fn column_sums_are_one(net: &HierarchicalNetwork<f64>) -> bool {
    let w = net.weights();
    (0..w.cols()).all(|j| ((0..w.rows()).map(|h| w[(h, j)]).sum::<f64>() - 1.0).abs() < 1e-12)
}

fn structural_residuals_small(net: &HierarchicalNetwork<f64>, spec: &SpectralDecomposition<f64>, tol: f64) -> bool {
    let w = net.weights();
    spec.identity_residual() < tol
        && spec.jordan_residual(w) < tol
        && spec.completeness_residual() < tol
        && spec.reconstruction_residual(w) < tol
}

/// Circulant on 3 agents: the two non-dominant eigenvalues are conjugate.
fn circulant(wd: [f64; 3]) -> (HierarchicalNetwork<f64>, SpectralDecomposition<f64>) {
    let rows: Vec<Vec<f64>> = (0..3).map(|h| (0..3).map(|j| wd[(j + 3 - h) % 3]).collect()).collect();
    let net = HierarchicalNetwork::from_rows(&rows, vec![3]).unwrap();
    let root3 = 3f64.sqrt();
    let omega = |k: usize, i: usize| Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * (k * i) as f64 / 3.0);
    let q = Matrix::from_fn(3, 3, |i, k| omega(k, i) / root3);
    let p = Matrix::from_fn(3, 3, |k, i| omega(k, i).conj() / root3);
    // W^T q_k = lambda_k q_k for the column convention used by the dynamics.
    let eig: Vec<Complex64> = (0..3).map(|k| (0..3).map(|d| omega(k, d) * wd[d]).sum()).collect();
    let spec = from_user_spectral(&net, eig, vec![1, 1], p, q).unwrap();
    (net, spec)
}

fn circulant_weights() -> impl Strategy<Value = [f64; 3]> {
    (0.05f64..1.0, 0.05f64..1.0, 0.05f64..1.0).prop_map(|(a, b, c)| {
        let s = a + b + c;
        [a / s, b / s, c / s]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sim_matrix_is_accepted(alpha in 0.001f64..0.999, beta in 0.001f64..0.999) {
        let m = Matrix::from_rows(&sim_rows(alpha, beta)).unwrap();
        let net = validate_network(m, vec![2, 2]);
        prop_assert!(net.is_ok(), "{:?}", net.err());
        prop_assert!(column_sums_are_one(&net.unwrap()));
    }

    #[test]
    fn example_constructors_are_valid(n in 2usize..8, alpha in 0.2f64..0.95, n1 in 2usize..5, n2 in 1usize..5, frac in 0.05f64..0.95) {
        let (net, spec) = build_example1::<f64>(n, alpha).unwrap();
        prop_assert!(column_sums_are_one(&net));
        prop_assert!(structural_residuals_small(&net, &spec, 1e-10));
        prop_assert_eq!(spec.block_orders().iter().sum::<usize>(), n - 1);
        prop_assert_eq!(spec.rho(), n - 1);

        let beta = frac * alpha;
        let (net, spec) = build_example2::<f64>(n1, n2, alpha, beta).unwrap();
        prop_assert!(column_sums_are_one(&net));
        prop_assert!(structural_residuals_small(&net, &spec, 1e-10));
        prop_assert_eq!(spec.block_orders().iter().sum::<usize>(), n1 + n2 - 1);
    }

    #[test]
    fn sim_network_decomposition(alpha in 0.01f64..0.99, beta in 0.01f64..0.99) {
        prop_assume!((2.0 * alpha - 1.0 - beta).abs() > 1e-3);
        let (net, spec) = build_sim_network::<f64>(alpha, beta).unwrap();
        prop_assert!(structural_residuals_small(&net, &spec, 1e-10));
    }

    #[test]
    fn step_size_monotone_past_clip(gamma in 0.51f64..=1.0, c in 0.1f64..20.0, r_max in 0.05f64..0.99) {
        let s = StepSizeSchedule::new(gamma, c, r_max).unwrap();
        let n0 = s.clip_point();
        let mut prev = s.r(n0);
        prop_assert!(prev < 1.0 && prev > 0.0);
        for n in n0 + 1..n0 + 300 {
            let r = s.r(n);
            prop_assert!(r <= prev && (0.0..1.0).contains(&r));
            prev = r;
        }
        for n in 1..n0 {
            prop_assert!(s.r(n) <= r_max);
        }
    }

    #[test]
    fn simulation_stays_in_unit_cube(alpha in 0.05f64..0.95, beta in 0.05f64..0.95, z0 in prop::array::uniform4(0.0f64..=1.0), gamma in 0.51f64..=1.0, seed in any::<u64>()) {
        prop_assume!((2.0 * alpha - 1.0 - beta).abs() > 1e-3);
        let (net, _) = build_sim_network::<f64>(alpha, beta).unwrap();
        let sch = StepSizeSchedule::with_default_clip(gamma, 1.0).unwrap();
        let mut st = ProcessState::new(&InitialSpec::fixed(&z0), seed, 0).unwrap();
        for _ in 0..500 {
            step(&mut st, &net, &sch).unwrap();
            prop_assert!(st.z().iter().chain(st.ncnt()).all(|&x| (0.0..=1.0).contains(&x)));
        }
    }

    #[test]
    fn absorbing_states(seed in any::<u64>(), value in prop::bool::ANY) {
        let (net, _) = build_example2::<f64>(2, 2, 0.6, 0.3).unwrap();
        let sch = StepSizeSchedule::with_default_clip(1.0, 2.0).unwrap();
        let v = if value { 1.0 } else { 0.0 };
        let mut st = ProcessState::new(&InitialSpec::fixed(&[v; 4]), seed, 3).unwrap();
        for _ in 0..200 {
            step(&mut st, &net, &sch).unwrap();
        }
        prop_assert!(st.z().iter().chain(st.ncnt()).all(|&x| x == v));
    }

    #[test]
    fn hermitian_pairing(wd in circulant_weights()) {
        let (_, spec) = circulant(wd);
        let s = s_zz_spectral(&spec, 3.0).unwrap();
        // Reduced indices 0 and 1 carry a conjugate pair of eigenvalues.
        let eig = spec.eigenvalues();
        prop_assert!((eig[1] - eig[2].conj()).norm() < 1e-12);
        let bar = |a: usize| 1 - a;
        for a in 0..2 {
            for b in 0..2 {
                prop_assert!((s[(a, b)] - s[(bar(a), bar(b))].conj()).norm() < 1e-12 * s.max_norm().max(1.0));
            }
        }
    }

    #[test]
    fn assembled_covariances_are_psd(n1 in 2usize..4, n2 in 1usize..4, alpha in 0.1f64..0.9, frac in 0.05f64..0.95, c in 0.6f64..6.0, gamma in 0.55f64..=1.0) {
        let (_, spec) = build_example2::<f64>(n1, n2, alpha, frac * alpha).unwrap();
        let sch = StepSizeSchedule::with_default_clip(gamma, c).unwrap();
        let regime = classify_regime(gamma, c, &spec);
        match covariance_report(&spec, &sch) {
            Ok(rep) => {
                prop_assert!(regime.is_supported());
                prop_assert!(check_covariance(&rep.joint).is_ok());
                prop_assert!(rep.joint.asymmetry() <= 1e-10 * rep.joint.max_abs().max(1.0));
                if let Some(s) = &rep.blocks.sigma_gamma {
                    prop_assert!(check_covariance(s).is_ok());
                }
            }
            Err(e) => {
                prop_assert_eq!(regime, Regime::Unsupported);
                prop_assert_eq!(e.kind(), "UnsupportedRegime");
            }
        }
    }

    #[test]
    fn complex_pairs_realify(wd in circulant_weights()) {
        let (_, spec) = circulant(wd);
        let tau = spec.tau().unwrap();
        let c = 2.0 / (1.0 - tau);
        let agent = subcritical_blocks(&spec, c).unwrap().to_agent(&spec).unwrap();
        for m in [&agent.zz, &agent.nn] {
            prop_assert!(check_covariance(m).is_ok());
        }
    }
}
