//! File formats: JSON network and spectral configs, CSV trajectories and
//! matrices.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{HierarchicalNetwork, StepSizeSchedule};
use crate::scalar::C;
use crate::simulate::Record;
use crate::spectral::{
    build_example1, build_example2, build_sim_network, from_user_spectral, SpectralDecomposition,
};

pub const DEFAULT_R_MAX: f64 = 0.99;

fn default_r_max() -> f64 {
    DEFAULT_R_MAX
}

/// Network plus step-size schedule. `weights[h][j]` is the influence of
/// agent `h` on agent `j`; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub weights: Vec<Vec<f64>>,
    pub block_sizes: Vec<usize>,
    pub gamma: f64,
    pub c: f64,
    #[serde(default = "default_r_max")]
    pub r_max: f64,
}

impl NetworkConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_reader(r: impl Read) -> Result<Self> {
        serde_json::from_reader(r).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_parts(network: &HierarchicalNetwork<f64>, schedule: &StepSizeSchedule<f64>) -> Self {
        Self {
            weights: network.weights().to_rows(),
            block_sizes: network.block_sizes().to_vec(),
            gamma: schedule.gamma(),
            c: schedule.c(),
            r_max: schedule.r_max(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn network(&self) -> Result<HierarchicalNetwork<f64>> {
        HierarchicalNetwork::from_rows(&self.weights, self.block_sizes.clone())
    }

    pub fn schedule(&self) -> Result<StepSizeSchedule<f64>> {
        StepSizeSchedule::new(self.gamma, self.c, self.r_max)
    }
}

/// Jordan data with complex entries written as `[re, im]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralConfig {
    pub eigenvalues: Vec<[f64; 2]>,
    pub block_orders: Vec<usize>,
    #[serde(rename = "P_tilde")]
    pub p_tilde: Vec<Vec<[f64; 2]>>,
    #[serde(rename = "Q_tilde")]
    pub q_tilde: Vec<Vec<[f64; 2]>>,
}

fn pair(z: C<f64>) -> [f64; 2] {
    [z.re, z.im]
}

fn complex_matrix(rows: &[Vec<[f64; 2]>]) -> Result<Matrix<C<f64>>> {
    let rows: Vec<Vec<C<f64>>> =
        rows.iter().map(|r| r.iter().map(|&[re, im]| C::new(re, im)).collect()).collect();
    Matrix::from_rows(&rows).ok_or_else(|| Error::Parse("ragged complex matrix".into()))
}

impl SpectralConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_reader(r: impl Read) -> Result<Self> {
        serde_json::from_reader(r).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spectral data serializes")
    }

    pub fn from_decomposition(spec: &SpectralDecomposition<f64>) -> Self {
        let rows = |m: &Matrix<C<f64>>| m.to_rows().into_iter().map(|r| r.into_iter().map(pair).collect()).collect();
        Self {
            eigenvalues: spec.eigenvalues().iter().copied().map(pair).collect(),
            block_orders: spec.block_orders().to_vec(),
            p_tilde: rows(spec.left_matrix()),
            q_tilde: rows(spec.right_matrix()),
        }
    }

    /// Validates against `network` and renormalizes the dominant pair.
    pub fn decomposition(&self, network: &HierarchicalNetwork<f64>) -> Result<SpectralDecomposition<f64>> {
        let eig = self.eigenvalues.iter().map(|&[re, im]| C::new(re, im)).collect();
        from_user_spectral(
            network,
            eig,
            self.block_orders.clone(),
            complex_matrix(&self.p_tilde)?,
            complex_matrix(&self.q_tilde)?,
        )
    }
}

/// Network families with closed-form Jordan data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "family")]
pub enum Family {
    Example1 { n: usize, alpha: f64 },
    Example2 { n1: usize, n2: usize, alpha: f64, beta: f64 },
    SimNetwork { alpha: f64, beta: f64 },
}

const MATCH_TOL: f64 = 1e-12;

/// Detects whether `network` belongs to a family with known Jordan data
/// and returns that data.
pub fn recognize_family(network: &HierarchicalNetwork<f64>) -> Option<(Family, SpectralDecomposition<f64>)> {
    let w = network.weights();
    let sizes = network.block_sizes();
    let n = network.n_agents();
    let same = |other: &HierarchicalNetwork<f64>| {
        other.block_sizes() == sizes && other.weights().max_abs_diff(w) < MATCH_TOL
    };
    if n >= 2 && sizes.iter().all(|&s| s == 1) {
        let alpha = w[(0, 1)];
        if let Ok((net, spec)) = build_example1(n, alpha) {
            if same(&net) {
                return Some((Family::Example1 { n, alpha }, spec));
            }
        }
    }
    if sizes == [2, 2] {
        let (alpha, beta) = (w[(0, 0)], w[(2, 2)]);
        if let Ok((net, spec)) = build_sim_network(alpha, beta) {
            if same(&net) {
                return Some((Family::SimNetwork { alpha, beta }, spec));
            }
        }
    }
    if sizes.len() == 2 && sizes[0] >= 2 {
        let (n1, n2) = (sizes[0], sizes[1]);
        let (alpha, beta) = (w[(0, 0)] - w[(1, 0)], w[(n1, n1)]);
        if let Ok((net, spec)) = build_example2(n1, n2, alpha, beta) {
            if same(&net) {
                return Some((Family::Example2 { n1, n2, alpha, beta }, spec));
            }
        }
    }
    None
}

/// Uses supplied spectral data when present, else a recognized family.
pub fn resolve_spectral(
    network: &HierarchicalNetwork<f64>,
    supplied: Option<&SpectralConfig>,
) -> Result<(SpectralDecomposition<f64>, Option<Family>)> {
    if let Some(cfg) = supplied {
        return Ok((cfg.decomposition(network)?, None));
    }
    recognize_family(network).map(|(f, s)| (s, Some(f))).ok_or_else(|| {
        Error::InvalidParameter(
            "network is not one of the built-in families; supply its Jordan data as a spectral JSON file".into(),
        )
    })
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

/// Header `n,Z_1..Z_N,N_1..N_N`.
pub fn trajectory_header(n_agents: usize) -> Vec<String> {
    let mut h = vec!["n".to_string()];
    h.extend((1..=n_agents).map(|j| format!("Z_{j}")));
    h.extend((1..=n_agents).map(|j| format!("N_{j}")));
    h
}

pub fn write_trajectory_csv(out: impl Write, n_agents: usize, records: &[Record<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(trajectory_header(n_agents)).map_err(csv_err)?;
    for r in records {
        let mut row = vec![r.n.to_string()];
        row.extend(r.z.iter().chain(&r.ncnt).map(|x| x.to_string()));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Parse(e.to_string()))
}

/// Reads inclinations from a CSV. A trajectory file yields the `Z_j`
/// columns of its last row; any other file must have a single data row
/// whose fields are the inclinations in agent order. Returns `(n, Z)`
/// where `n` is taken from the trajectory when present.
pub fn read_state_csv(input: impl Read) -> Result<(Option<u64>, Vec<f64>)> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers().map_err(csv_err)?.clone();
    let mut last = None;
    let mut rows = 0usize;
    for rec in rdr.records() {
        last = Some(rec.map_err(csv_err)?);
        rows += 1;
    }
    let last = last.ok_or_else(|| Error::Parse("state file has no data rows".into()))?;
    let num = |s: &str| s.trim().parse::<f64>().map_err(|e| Error::Parse(format!("{s:?}: {e}")));
    if header.get(0) == Some("n") {
        let n = last
            .get(0)
            .unwrap_or("")
            .trim()
            .parse::<u64>()
            .map_err(|e| Error::Parse(format!("step column: {e}")))?;
        let z = header
            .iter()
            .zip(last.iter())
            .filter(|(h, _)| h.starts_with("Z_"))
            .map(|(_, v)| num(v))
            .collect::<Result<Vec<_>>>()?;
        return Ok((Some(n), z));
    }
    if rows != 1 {
        return Err(Error::Parse(format!("expected one row of inclinations, found {rows}")));
    }
    Ok((None, last.iter().map(num).collect::<Result<Vec<_>>>()?))
}

/// Writes a real matrix as CSV with header `col_1..col_n`.
pub fn write_matrix_csv(out: impl Write, m: &Matrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record((1..=m.cols()).map(|j| format!("col_{j}"))).map_err(csv_err)?;
    for i in 0..m.rows() {
        w.write_record(m.row(i).iter().map(|x| x.to_string())).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Parse(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::build_example2;

    #[test]
    fn config_defaults_and_strictness() {
        let ok = r#"{"weights": [[1.0]], "block_sizes": [1], "gamma": 1.0, "c": 1.0}"#;
        let cfg = NetworkConfig::from_json(ok).unwrap();
        assert_eq!(cfg.r_max, DEFAULT_R_MAX);
        assert!(cfg.network().is_ok());
        let bad = r#"{"weights": [[1.0]], "block_sizes": [1], "gamma": 1.0, "c": 1.0, "extra": 3}"#;
        assert_eq!(NetworkConfig::from_json(bad).unwrap_err().kind(), "Parse");
    }

    #[test]
    fn config_round_trip() {
        let (net, _) = build_example2::<f64>(2, 3, 0.6, 0.3).unwrap();
        let sch = StepSizeSchedule::new(1.0, 2.0, 0.5).unwrap();
        let cfg = NetworkConfig::from_parts(&net, &sch);
        let back = NetworkConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.schedule().unwrap(), sch);
    }

    #[test]
    fn spectral_round_trip() {
        let (net, spec) = build_example2::<f64>(3, 2, 0.7, 0.2).unwrap();
        let cfg = SpectralConfig::from_decomposition(&spec);
        let text = cfg.to_json();
        assert!(text.contains("P_tilde") && text.contains("Q_tilde"));
        let back = SpectralConfig::from_json(&text).unwrap().decomposition(&net).unwrap();
        assert!(back.right_matrix().max_norm_diff(spec.right_matrix()) < 1e-14);
        assert_eq!(back.block_orders(), spec.block_orders());
    }

    #[test]
    fn families_are_recognized() {
        let (n1, _) = build_example1::<f64>(4, 0.3).unwrap();
        assert_eq!(recognize_family(&n1).unwrap().0, Family::Example1 { n: 4, alpha: 0.3 });
        let (n2, _) = build_example2::<f64>(3, 1, 0.6, 0.2).unwrap();
        match recognize_family(&n2).unwrap().0 {
            Family::Example2 { n1, n2, alpha, beta } => {
                assert_eq!((n1, n2), (3, 1));
                assert!((alpha - 0.6).abs() < 1e-14 && (beta - 0.2).abs() < 1e-14);
            }
            f => panic!("wrong family {f:?}"),
        }
        let (n3, _) = build_sim_network::<f64>(0.3, 0.1).unwrap();
        assert!(matches!(recognize_family(&n3).unwrap().0, Family::SimNetwork { .. }));
        let w = Matrix::from_rows(&[vec![0.5, 0.5, 0.2], vec![0.5, 0.5, 0.3], vec![0.0, 0.0, 0.5]]).unwrap();
        let other = HierarchicalNetwork::new(w, vec![2, 1]).unwrap();
        assert!(recognize_family(&other).is_none());
        assert!(resolve_spectral(&other, None).is_err());
    }

    #[test]
    fn trajectory_csv_and_state() {
        let recs = vec![
            Record { n: 1, z: vec![0.1, 0.2], ncnt: vec![1.0, 0.0], increment: vec![0.0, 0.0] },
            Record { n: 2, z: vec![0.3, 0.4], ncnt: vec![0.5, 0.5], increment: vec![0.0, 0.0] },
        ];
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, 2, &recs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("n,Z_1,Z_2,N_1,N_2\n"));
        let (n, z) = read_state_csv(buf.as_slice()).unwrap();
        assert_eq!((n, z), (Some(2), vec![0.3, 0.4]));
        let (n, z) = read_state_csv("Z_1,Z_2\n0.25,0.75\n".as_bytes()).unwrap();
        assert_eq!((n, z), (None, vec![0.25, 0.75]));
        assert!(read_state_csv("a,b\n1,2\n3,4\n".as_bytes()).is_err());
    }

    #[test]
    fn matrix_csv_layout() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.5]]).unwrap();
        let mut buf = Vec::new();
        write_matrix_csv(&mut buf, &m).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "col_1,col_2\n1,2\n3,4.5\n");
    }
}
