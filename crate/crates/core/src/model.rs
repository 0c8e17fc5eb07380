//! Distributed networked control system models.
//!
//! A [`DncsModel`] holds `N` agents with `n`-dimensional states, the sparse
//! interconnection blocks `A_ij`, the maximum communication delay `tau_d`,
//! and the Markov chain that drives the delay of every directed link.
//! Agent indices are one-based throughout the public API.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, DenseMatrix, DEFAULT_EIG_TOL};

const STOCHASTIC_TOL: f64 = 1e-12;

/// Per-link delay chain over the delay values `0..=tau_d`.
#[derive(Clone, Debug, PartialEq)]
pub struct DelayChain {
    p: DenseMatrix,
    pi0: Vec<f64>,
}

impl DelayChain {
    pub fn new(p: DenseMatrix, pi0: Vec<f64>) -> Result<Self> {
        check_stochastic(&p, "chain.P")?;
        check_distribution(&pi0, p.rows(), "chain.pi0")?;
        Ok(Self { p, pi0 })
    }

    /// Two-state chain (delay 0 or 1) starting undelayed, with transition
    /// matrix `[[0.5, 0.5], [0.3, 0.7]]`. This is the chain used for the
    /// pendulum benchmark.
    pub fn two_state_benchmark() -> Self {
        Self {
            p: DenseMatrix::from_rows(&[[0.5, 0.5], [0.3, 0.7]]),
            pi0: vec![1.0, 0.0],
        }
    }

    /// Single-state chain: no delays at all.
    pub fn undelayed() -> Self {
        Self {
            p: DenseMatrix::identity(1),
            pi0: vec![1.0],
        }
    }

    pub fn q(&self) -> usize {
        self.p.rows()
    }

    pub fn p(&self) -> &DenseMatrix {
        &self.p
    }

    pub fn pi0(&self) -> &[f64] {
        &self.pi0
    }

    /// Stationary distribution by power iteration from the uniform vector.
    pub fn stationary(&self) -> Vec<f64> {
        let q = self.q();
        let mut pi = vec![1.0 / q as f64; q];
        for _ in 0..100_000 {
            let mut next = vec![0.0; q];
            for (r, pr) in pi.iter().enumerate() {
                for (s, ns) in next.iter_mut().enumerate() {
                    *ns += pr * self.p[(r, s)];
                }
            }
            // lazy averaging keeps periodic chains from oscillating
            let next: Vec<f64> = next.iter().zip(&pi).map(|(a, b)| 0.5 * (a + b)).collect();
            let delta = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            pi = next;
            if delta < 1e-15 {
                break;
            }
        }
        pi
    }
}

pub(crate) fn check_stochastic(p: &DenseMatrix, path: &str) -> Result<()> {
    if !p.is_square() {
        return Err(Error::InvalidModel {
            path: path.to_string(),
            reason: format!("transition matrix must be square, got {}x{}", p.rows(), p.cols()),
        });
    }
    for r in 0..p.rows() {
        let row = p.row(r);
        if let Some((s, v)) = row.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidModel {
                path: format!("{path}[{r}][{s}]"),
                reason: format!("probability {v} outside [0, 1]"),
            });
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::InvalidModel {
                path: format!("{path}[{r}]"),
                reason: format!("row not stochastic (sums to {sum})"),
            });
        }
    }
    Ok(())
}

fn check_distribution(pi: &[f64], q: usize, path: &str) -> Result<()> {
    if pi.len() != q {
        return Err(Error::InvalidModel {
            path: path.to_string(),
            reason: format!("expected {q} entries, got {}", pi.len()),
        });
    }
    if let Some((s, v)) = pi.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidModel {
            path: format!("{path}[{s}]"),
            reason: format!("probability {v} outside [0, 1]"),
        });
    }
    let sum: f64 = pi.iter().sum();
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::InvalidModel {
            path: path.to_string(),
            reason: format!("distribution sums to {sum}"),
        });
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct DncsModel {
    agents: usize,
    dim: usize,
    tau_d: usize,
    blocks: BTreeMap<(usize, usize), DenseMatrix>,
    chain: DelayChain,
}

impl DncsModel {
    /// Validates and assembles a model. Off-diagonal blocks that are exactly
    /// zero are dropped, since an absent pair already means `A_ij = 0`.
    pub fn new<I>(agents: usize, dim: usize, tau_d: usize, blocks: I, chain: DelayChain) -> Result<Self>
    where
        I: IntoIterator<Item = ((usize, usize), DenseMatrix)>,
    {
        let invalid = |path: &str, reason: String| Error::InvalidModel {
            path: path.to_string(),
            reason,
        };
        if agents == 0 {
            return Err(invalid("N", "need at least one agent".into()));
        }
        if dim == 0 {
            return Err(invalid("n", "state dimension must be positive".into()));
        }
        if chain.q() != tau_d + 1 {
            return Err(invalid(
                "chain.P",
                format!("chain has {} states but tau_d + 1 = {}", chain.q(), tau_d + 1),
            ));
        }
        let mut map = BTreeMap::new();
        for (k, ((i, j), block)) in blocks.into_iter().enumerate() {
            let path = format!("blocks[{k}]");
            for (name, idx) in [("i", i), ("j", j)] {
                if idx == 0 || idx > agents {
                    return Err(invalid(
                        &format!("{path}.{name}"),
                        format!("agent index {idx} outside 1..={agents}"),
                    ));
                }
            }
            if block.rows() != dim || block.cols() != dim {
                return Err(invalid(
                    &format!("{path}.values"),
                    format!("block is {}x{}, expected {dim}x{dim}", block.rows(), block.cols()),
                ));
            }
            if !block.is_finite() {
                return Err(invalid(&format!("{path}.values"), "non-finite entry".into()));
            }
            if i != j && block.as_slice().iter().all(|v| *v == 0.0) {
                continue;
            }
            if map.insert((i, j), block).is_some() {
                return Err(invalid(&path, format!("duplicate block ({i}, {j})")));
            }
        }
        for i in 1..=agents {
            map.entry((i, i)).or_insert_with(|| DenseMatrix::zeros(dim, dim));
        }
        Ok(Self {
            agents,
            dim,
            tau_d,
            blocks: map,
            chain,
        })
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tau_d(&self) -> usize {
        self.tau_d
    }

    pub fn q(&self) -> usize {
        self.tau_d + 1
    }

    pub fn chain(&self) -> &DelayChain {
        &self.chain
    }

    pub fn block(&self, i: usize, j: usize) -> Option<&DenseMatrix> {
        self.blocks.get(&(i, j))
    }

    /// Stored blocks in ascending `(i, j)` order.
    pub fn blocks(&self) -> impl Iterator<Item = ((usize, usize), &DenseMatrix)> {
        self.blocks.iter().map(|(k, v)| (*k, v))
    }

    /// Same topology and blocks, different delay chain.
    pub fn with_chain(&self, chain: DelayChain) -> Result<Self> {
        Self::new(
            self.agents,
            self.dim,
            chain.q() - 1,
            self.blocks.iter().map(|(k, v)| (*k, v.clone())),
            chain,
        )
    }

    pub(crate) fn check_agent(&self, i: usize) -> Result<()> {
        if i == 0 || i > self.agents {
            Err(Error::AgentOutOfRange {
                index: i,
                agents: self.agents,
            })
        } else {
            Ok(())
        }
    }
}

/// Sorted neighbor set of agent `i`, including `i` itself. Its length is
/// the reduced-model size `n̂_i`.
pub fn neighborhood(model: &DncsModel, i: usize) -> Result<Vec<usize>> {
    model.check_agent(i)?;
    let mut out: Vec<usize> = model
        .blocks
        .keys()
        .filter_map(|&(a, b)| match (a == i, b == i) {
            (true, _) => Some(b),
            (_, true) => Some(a),
            _ => None,
        })
        .collect();
    out.push(i);
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// The undelayed `Nn × Nn` block matrix of the whole network.
pub fn build_global_matrix(model: &DncsModel) -> DenseMatrix {
    let n = model.dim;
    let mut a = DenseMatrix::zeros(model.agents * n, model.agents * n);
    for (&(i, j), block) in &model.blocks {
        a.set_block((i - 1) * n, (j - 1) * n, block);
    }
    a
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NominalStability {
    pub rho: f64,
    pub stable: bool,
}

/// Stability of the delay-free network: `ρ(𝒜) < 1`.
pub fn nominal_stability(model: &DncsModel) -> Result<NominalStability> {
    let rho = linalg::spectral_radius(&build_global_matrix(model), DEFAULT_EIG_TOL)?;
    Ok(NominalStability { rho, stable: rho < 1.0 })
}

// ---------------------------------------------------------------------------
// JSON ingestion

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    #[serde(rename = "N")]
    agents: usize,
    n: usize,
    tau_d: usize,
    blocks: Vec<BlockDoc>,
    chain: ChainDoc,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlockDoc {
    i: usize,
    j: usize,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChainDoc {
    #[serde(rename = "P")]
    p: Vec<f64>,
    pi0: Vec<f64>,
}

/// Parses and validates a model document.
pub fn load_model(text: &str) -> Result<DncsModel> {
    let doc: ModelDoc = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let q = doc.tau_d + 1;
    if doc.chain.p.len() != q * q {
        return Err(Error::InvalidModel {
            path: "chain.P".into(),
            reason: format!("expected {} entries for q = {q}, got {}", q * q, doc.chain.p.len()),
        });
    }
    let p = DenseMatrix::from_row_major(q, q, doc.chain.p).map_err(|e| Error::InvalidModel {
        path: "chain.P".into(),
        reason: e.to_string(),
    })?;
    let chain = DelayChain::new(p, doc.chain.pi0)?;
    let n = doc.n;
    let mut blocks = Vec::with_capacity(doc.blocks.len());
    for (k, b) in doc.blocks.into_iter().enumerate() {
        if b.values.len() != n * n {
            return Err(Error::InvalidModel {
                path: format!("blocks[{k}].values"),
                reason: format!("expected {} values for n = {n}, got {}", n * n, b.values.len()),
            });
        }
        let m = DenseMatrix::from_row_major(n, n, b.values).map_err(|e| Error::InvalidModel {
            path: format!("blocks[{k}].values"),
            reason: e.to_string(),
        })?;
        blocks.push(((b.i, b.j), m));
    }
    DncsModel::new(doc.agents, n, doc.tau_d, blocks, chain)
}

pub fn load_model_file(path: &Path) -> Result<DncsModel> {
    load_model(&std::fs::read_to_string(path)?)
}

/// Serializes a model in the same schema [`load_model`] reads.
pub fn model_to_json(model: &DncsModel) -> String {
    let doc = ModelDoc {
        agents: model.agents,
        n: model.dim,
        tau_d: model.tau_d,
        blocks: model
            .blocks
            .iter()
            .map(|(&(i, j), m)| BlockDoc {
                i,
                j,
                values: m.as_slice().to_vec(),
            })
            .collect(),
        chain: ChainDoc {
            p: model.chain.p.as_slice().to_vec(),
            pi0: model.chain.pi0.clone(),
        },
    };
    serde_json::to_string_pretty(&doc).expect("model document serializes")
}

// ---------------------------------------------------------------------------
// Spring-coupled inverted pendulum chain

/// Physical parameters of the pendulum chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PendulumParams {
    /// Springs attached to the two end pendulums.
    pub end_springs: f64,
    /// Springs attached to every interior pendulum.
    pub interior_springs: f64,
    /// Interaction weight `h_ij` with each neighbor.
    pub coupling: f64,
    pub gravity: f64,
    pub spring_constant: f64,
    pub mass: f64,
    pub length: f64,
    /// Sampling period of the discretization.
    pub dt: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            end_springs: 1.0,
            interior_springs: 2.0,
            coupling: 0.04,
            gravity: 9.8,
            spring_constant: 5.0,
            mass: 0.5,
            length: 1.0,
            dt: 0.1,
        }
    }
}

impl PendulumParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("end_springs", self.end_springs),
            ("interior_springs", self.interior_springs),
            ("gravity", self.gravity),
            ("spring_constant", self.spring_constant),
            ("mass", self.mass),
            ("length", self.length),
            ("dt", self.dt),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.coupling >= 0.0 && self.coupling.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "coupling must be non-negative, got {}",
                self.coupling
            )));
        }
        Ok(())
    }

    /// Sets one parameter by name. Accepts both descriptive names and the
    /// usual symbols (`a_end`, `a_mid`, `h`, `g`, `K`, `m`, `l`, `dt`).
    pub fn set(&mut self, key: &str, value: f64) -> Result<()> {
        let slot = match key {
            "end_springs" | "a_end" => &mut self.end_springs,
            "interior_springs" | "a_mid" => &mut self.interior_springs,
            "coupling" | "h" => &mut self.coupling,
            "gravity" | "g" => &mut self.gravity,
            "spring_constant" | "K" => &mut self.spring_constant,
            "mass" | "m" => &mut self.mass,
            "length" | "l" => &mut self.length,
            "dt" => &mut self.dt,
            other => return Err(Error::InvalidArgument(format!("unknown pendulum parameter `{other}`"))),
        };
        *slot = value;
        Ok(())
    }

    fn inertia(&self) -> f64 {
        self.mass * self.length * self.length
    }

    /// Closed-loop diagonal block `A_i + B_i K_i` for a pendulum carrying
    /// `springs` springs, under the undelayed feedback `u_i(k) = K_i x_i(k)`.
    pub fn closed_loop_block(&self, springs: f64) -> DenseMatrix {
        let (g, l, k, dt) = (self.gravity, self.length, self.spring_constant, self.dt);
        let ml2 = self.inertia();
        let a = DenseMatrix::from_rows(&[[1.0, dt], [(g / l - springs * k / ml2) * dt, 1.0]]);
        let b = [0.0, dt / ml2];
        let gain = [springs * k - ml2 / 4.0 * (8.0 + 4.0 * g / l), -3.0 * ml2];
        let mut out = a;
        for r in 0..2 {
            for c in 0..2 {
                out[(r, c)] += b[r] * gain[c];
            }
        }
        out
    }

    /// Spring coupling block `H_ij` toward one neighbor.
    pub fn coupling_block(&self) -> DenseMatrix {
        DenseMatrix::from_rows(&[
            [0.0, 0.0],
            [self.coupling * self.spring_constant / self.inertia() * self.dt, 0.0],
        ])
    }
}

/// `N` pendulums on a line, each coupled to its immediate neighbors.
pub fn build_pendulum_model(agents: usize, params: &PendulumParams, chain: DelayChain) -> Result<DncsModel> {
    if agents < 2 {
        return Err(Error::InvalidArgument(format!(
            "pendulum chain needs at least 2 agents, got {agents}"
        )));
    }
    params.validate()?;
    let end = params.closed_loop_block(params.end_springs);
    let interior = params.closed_loop_block(params.interior_springs);
    let h = params.coupling_block();
    let mut blocks = Vec::with_capacity(3 * agents);
    for i in 1..=agents {
        let diag = if i == 1 || i == agents { &end } else { &interior };
        blocks.push(((i, i), diag.clone()));
        if i > 1 {
            blocks.push(((i, i - 1), h.clone()));
        }
        if i < agents {
            blocks.push(((i, i + 1), h.clone()));
        }
    }
    let tau_d = chain.q() - 1;
    DncsModel::new(agents, 2, tau_d, blocks, chain)
}

/// Benchmark pendulum chain with default parameters and the two-state
/// delay chain.
pub fn pendulum_benchmark(agents: usize) -> Result<DncsModel> {
    build_pendulum_model(agents, &PendulumParams::default(), DelayChain::two_state_benchmark())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_agent_json(p_row: &str) -> String {
        format!(
            r#"{{"N": 2, "n": 1, "tau_d": 1,
                "blocks": [{{"i":1,"j":1,"values":[0.5]}}, {{"i":2,"j":2,"values":[0.5]}},
                           {{"i":1,"j":2,"values":[0.1]}}, {{"i":2,"j":1,"values":[0.1]}}],
                "chain": {{"P": [{p_row}, 0.3, 0.7], "pi0": [1, 0]}}}}"#
        )
    }

    fn diagonal_model(agents: usize, value: f64) -> DncsModel {
        let blocks = (1..=agents).map(|i| ((i, i), DenseMatrix::from_rows(&[[value]])));
        DncsModel::new(agents, 1, 0, blocks, DelayChain::undelayed()).unwrap()
    }

    #[test]
    fn loads_minimal_two_agent_model() {
        let m = load_model(&two_agent_json("0.5, 0.5")).unwrap();
        assert_eq!((m.agents(), m.dim(), m.tau_d()), (2, 1, 1));
        assert_eq!(
            build_global_matrix(&m),
            DenseMatrix::from_rows(&[[0.5, 0.1], [0.1, 0.5]])
        );
        let nom = nominal_stability(&m).unwrap();
        assert!((nom.rho - 0.6).abs() < 1e-14);
        assert!(nom.stable);
    }

    #[test]
    fn rejects_non_stochastic_row() {
        let err = load_model(&two_agent_json("0.5, 0.6")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row not stochastic"), "{msg}");
        assert!(msg.starts_with("chain.P[0]"), "{msg}");
    }

    #[test]
    fn rejects_block_dimension_mismatch() {
        let text = two_agent_json("0.5, 0.5").replace(r#""values":[0.1]}, {"i":2"#, r#""values":[0.1, 0.2]}, {"i":2"#);
        let err = load_model(&text).unwrap_err();
        assert!(err.to_string().starts_with("blocks[2].values"), "{err}");
    }

    #[test]
    fn rejects_schema_violations() {
        assert!(matches!(load_model("{\"N\": 2}"), Err(Error::Parse(_))));
        let text = two_agent_json("0.5, 0.5").replace("\"tau_d\": 1", "\"tau_d\": 1, \"extra\": 3");
        assert!(matches!(load_model(&text), Err(Error::Parse(_))));
        let text = two_agent_json("0.5, 0.5").replace(r#""i":1,"j":2"#, r#""i":1,"j":5"#);
        let err = load_model(&text).unwrap_err();
        assert!(err.to_string().starts_with("blocks[2].j"), "{err}");
    }

    #[test]
    fn diagonal_model_basics() {
        let m = diagonal_model(4, 0.5);
        assert_eq!(build_global_matrix(&m), DenseMatrix::from_diag(&[0.5; 4]));
        assert!((nominal_stability(&m).unwrap().rho - 0.5).abs() < 1e-15);
        for i in 1..=4 {
            assert_eq!(neighborhood(&m, i).unwrap(), vec![i]);
        }
        assert!(matches!(
            neighborhood(&m, 5),
            Err(Error::AgentOutOfRange { index: 5, agents: 4 })
        ));
    }

    #[test]
    fn pendulum_closed_loop_block_by_hand() {
        // interior pendulum: (g/l - 2K/(m l^2)) dt = (9.8 - 20) * 0.1 = -1.02,
        // B = [0, 0.2], K_2 = [10 - 0.125 * 47.2, -1.5] = [4.1, -1.5]
        // so the second row is [-1.02 + 0.82, 1 - 0.3].
        let m = build_pendulum_model(3, &PendulumParams::default(), DelayChain::two_state_benchmark()).unwrap();
        let expected = DenseMatrix::from_rows(&[[1.0, 0.1], [-0.2, 0.7]]);
        assert!(m.block(2, 2).unwrap().max_abs_diff(&expected) < 1e-14);
        let h = DenseMatrix::from_rows(&[[0.0, 0.0], [0.04, 0.0]]);
        assert!(m.block(2, 1).unwrap().max_abs_diff(&h) < 1e-15);
        assert!(m.block(1, 3).is_none());
    }

    #[test]
    fn pendulum_endpoints_use_single_spring() {
        let p = PendulumParams {
            spring_constant: 7.0,
            ..Default::default()
        };
        let m = build_pendulum_model(2, &p, DelayChain::two_state_benchmark()).unwrap();
        assert_eq!(m.block(1, 1), Some(&p.closed_loop_block(1.0)));
        assert_eq!(m.block(2, 2), Some(&p.closed_loop_block(1.0)));
        assert!(build_pendulum_model(1, &p, DelayChain::two_state_benchmark()).is_err());
    }

    #[test]
    fn pendulum_nominal_radius() {
        let m = pendulum_benchmark(100).unwrap();
        let a = build_global_matrix(&m);
        assert_eq!(a.rows(), 200);
        // block tridiagonal
        for i in 1..=100usize {
            for j in 1..=100usize {
                let blk = a.block((i - 1) * 2, (j - 1) * 2, 2, 2);
                let zero = blk.as_slice().iter().all(|v| *v == 0.0);
                assert_eq!(zero, i.abs_diff(j) > 1, "({i},{j})");
            }
        }
        let nom = nominal_stability(&m).unwrap();
        assert!((nom.rho - 0.9525).abs() < 1e-3, "{}", nom.rho);
        assert!(nom.stable);
    }

    #[test]
    fn pendulum_neighborhoods() {
        let m = pendulum_benchmark(100).unwrap();
        assert_eq!(neighborhood(&m, 50).unwrap(), vec![49, 50, 51]);
        assert_eq!(neighborhood(&m, 1).unwrap(), vec![1, 2]);
        assert_eq!(neighborhood(&m, 100).unwrap(), vec![99, 100]);
    }

    #[test]
    fn pendulum_json_round_trip() {
        let m = pendulum_benchmark(100).unwrap();
        let back = load_model(&model_to_json(&m)).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn pendulum_mirror_symmetry() {
        let n = 9;
        let m = pendulum_benchmark(n).unwrap();
        for ((i, j), blk) in m.blocks() {
            assert_eq!(m.block(n + 1 - i, n + 1 - j), Some(blk));
        }
    }

    #[test]
    fn stationary_distribution_of_benchmark_chain() {
        let pi = DelayChain::two_state_benchmark().stationary();
        assert!((pi[0] - 0.375).abs() < 1e-12 && (pi[1] - 0.625).abs() < 1e-12);
    }

    #[test]
    fn chain_length_must_match_delay_bound() {
        let blocks = vec![((1, 1), DenseMatrix::from_rows(&[[0.5]]))];
        let err = DncsModel::new(1, 1, 2, blocks, DelayChain::two_state_benchmark()).unwrap_err();
        assert!(err.to_string().starts_with("chain.P"));
    }
}
