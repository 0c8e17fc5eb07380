//! Mean-square stability of the delayed network.
//!
//! The exact test stacks the second moments of all modes into one vector and
//! asks whether the linear map that propagates it is a contraction:
//! block `(s, r)` of that map is `p_rs · (W_r ⊗ W_r)`. The same map drives
//! [`covariance_step`], which serves as an independent oracle.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::{self, DenseMatrix, DEFAULT_EIG_TOL, DEFAULT_KRON_LIMIT};
use crate::model::{self, DncsModel, NominalStability};
use crate::switched::{self, ModeFamily, Scope};

/// Half-width of the band around 1 reported as [`Verdict::Marginal`].
pub const MARGINAL_BAND: f64 = 1e-9;

/// Relative tolerance when matching blocks across a relabeling.
const DEDUP_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Stable,
    Unstable,
    Marginal,
}

impl Verdict {
    pub fn from_rho(rho: f64) -> Self {
        if rho < 1.0 - MARGINAL_BAND {
            Verdict::Stable
        } else if rho > 1.0 + MARGINAL_BAND {
            Verdict::Unstable
        } else {
            Verdict::Marginal
        }
    }

    /// Worst of several verdicts: unstable beats marginal beats stable.
    pub fn combine<I: IntoIterator<Item = Verdict>>(it: I) -> Self {
        it.into_iter().fold(Verdict::Stable, |acc, v| match (acc, v) {
            (Verdict::Unstable, _) | (_, Verdict::Unstable) => Verdict::Unstable,
            (Verdict::Marginal, _) | (_, Verdict::Marginal) => Verdict::Marginal,
            _ => Verdict::Stable,
        })
    }
}

/// The `m·d² × m·d²` second-moment propagation matrix of a mode family.
#[derive(Clone, Debug)]
pub struct MssTestMatrix {
    pub scope: Scope,
    pub matrix: DenseMatrix,
}

impl MssTestMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn spectral_radius(&self) -> Result<f64> {
        linalg::spectral_radius(&self.matrix, DEFAULT_EIG_TOL)
    }
}

pub fn mss_matrix(family: &ModeFamily) -> Result<MssTestMatrix> {
    mss_matrix_with_transition(family, family.joint_p())
}

/// Same as [`mss_matrix`] with the family's chain replaced by `p`.
pub fn mss_matrix_with_transition(family: &ModeFamily, p: &DenseMatrix) -> Result<MssTestMatrix> {
    let m = family.mode_count();
    let d = family.state_dim();
    if p.rows() != m || p.cols() != m {
        return Err(Error::DimensionMismatch(format!(
            "transition matrix is {}x{} for {m} modes",
            p.rows(),
            p.cols()
        )));
    }
    let dd = d * d;
    let size = m as u128 * dd as u128;
    if size * size > DEFAULT_KRON_LIMIT as u128 {
        return Err(Error::SizeOverflow {
            entries: size * size,
            limit: DEFAULT_KRON_LIMIT,
        });
    }
    let squares = family
        .matrices()
        .par_iter()
        .map(|w| linalg::kron(w, w))
        .collect::<Result<Vec<_>>>()?;
    let mut out = DenseMatrix::zeros(m * dd, m * dd);
    for s in 0..m {
        for (r, sq) in squares.iter().enumerate() {
            let prs = p[(r, s)];
            if prs != 0.0 {
                out.set_block(s * dd, r * dd, &sq.scaled(prs));
            }
        }
    }
    Ok(MssTestMatrix {
        scope: family.scope(),
        matrix: out,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ScopeResult {
    pub scope: Scope,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub agent: Option<usize>,
    /// Agents whose states make up the scope.
    pub members: Vec<usize>,
    /// Agents this entry decides (its symmetry class).
    pub represents: Vec<usize>,
    pub rho: f64,
    pub verdict: Verdict,
    pub stable: bool,
    #[serde(serialize_with = "ser_count")]
    pub m: usize,
    pub dim: usize,
}

fn ser_count<S: Serializer>(m: &usize, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_u64(*m as u64)
}

#[derive(Clone, Debug, Serialize)]
pub struct StabilityReport {
    pub overall: Verdict,
    pub scopes: Vec<ScopeResult>,
    pub classes: Vec<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nominal: Option<NominalStability>,
}

impl StabilityReport {
    fn from_scopes(scopes: Vec<ScopeResult>, classes: Vec<Vec<usize>>) -> Self {
        Self {
            overall: Verdict::combine(scopes.iter().map(|s| s.verdict)),
            scopes,
            classes,
            nominal: None,
        }
    }
}

fn evaluate(family: &ModeFamily, represents: Vec<usize>) -> Result<ScopeResult> {
    let t = mss_matrix(family)?;
    let rho = t.spectral_radius()?;
    let verdict = Verdict::from_rho(rho);
    Ok(ScopeResult {
        scope: family.scope(),
        agent: match family.scope() {
            Scope::Agent(i) => Some(i),
            _ => None,
        },
        members: family.members().to_vec(),
        represents,
        rho,
        verdict,
        stable: verdict == Verdict::Stable,
        m: family.mode_count(),
        dim: t.dim(),
    })
}

/// Exact test on the whole network. Fails with a cap error on anything
/// beyond toy sizes.
pub fn mss_test_full(model: &DncsModel) -> Result<StabilityReport> {
    let family = switched::build_mode_family(model, Scope::Global)?;
    let all: Vec<usize> = (1..=model.agents()).collect();
    let entry = evaluate(&family, all.clone())?;
    Ok(StabilityReport::from_scopes(vec![entry], vec![all]))
}

/// Exact test for a generic Markov jump system.
pub fn mss_test_family(family: &ModeFamily) -> Result<StabilityReport> {
    let entry = evaluate(family, Vec::new())?;
    Ok(StabilityReport::from_scopes(vec![entry], Vec::new()))
}

/// Per-agent test over each neighborhood. With `dedup`, one representative
/// per symmetry class is evaluated.
pub fn mss_test_reduced(model: &DncsModel, dedup: bool) -> Result<StabilityReport> {
    let classes = if dedup {
        dedup_agents(model)
    } else {
        (1..=model.agents()).map(|i| vec![i]).collect()
    };
    let scopes = classes
        .par_iter()
        .map(|class| {
            let family = switched::build_mode_family(model, Scope::Agent(class[0]))?;
            evaluate(&family, class.clone())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StabilityReport::from_scopes(scopes, classes))
}

/// Partition of the agents into classes whose reduced subsystems coincide
/// after relabeling the neighborhood. Classes are ordered by their smallest
/// member.
pub fn dedup_agents(model: &DncsModel) -> Vec<Vec<usize>> {
    let hoods: Vec<Vec<usize>> = (1..=model.agents())
        .map(|i| model::neighborhood(model, i).expect("agent in range"))
        .collect();
    let mut classes: Vec<Vec<usize>> = Vec::new();
    for i in 1..=model.agents() {
        let found = classes.iter_mut().find(|c| {
            let rep = c[0];
            hoods[rep - 1].len() == hoods[i - 1].len() && equivalent(model, rep, &hoods[rep - 1], i, &hoods[i - 1])
        });
        match found {
            Some(c) => c.push(i),
            None => classes.push(vec![i]),
        }
    }
    classes
}

fn blocks_match(a: Option<&DenseMatrix>, b: Option<&DenseMatrix>) -> bool {
    match (a, b) {
        (None, None) => true,
        (Some(x), Some(y)) => x
            .as_slice()
            .iter()
            .zip(y.as_slice())
            .all(|(u, v)| (u - v).abs() <= DEDUP_TOL * u.abs().max(v.abs()).max(1.0)),
        _ => false,
    }
}

/// Searches for a bijection `hood_a → hood_b` sending `a` to `b` under which
/// every block (including absent ones) is preserved.
fn equivalent(model: &DncsModel, a: usize, hood_a: &[usize], b: usize, hood_b: &[usize]) -> bool {
    let k = hood_a.len();
    let mut map = vec![usize::MAX; k];
    let mut used = vec![false; k];
    let ia = hood_a.binary_search(&a).unwrap();
    let ib = hood_b.binary_search(&b).unwrap();
    map[ia] = ib;
    used[ib] = true;

    let consistent = |map: &[usize], upto: &[usize]| -> bool {
        // all pairs among already-assigned positions
        upto.iter().all(|&x| {
            upto.iter().all(|&y| {
                blocks_match(
                    model.block(hood_a[x], hood_a[y]),
                    model.block(hood_b[map[x]], hood_b[map[y]]),
                )
            })
        })
    };
    if !consistent(&map, &[ia]) {
        return false;
    }
    let order: Vec<usize> = std::iter::once(ia).chain((0..k).filter(|&x| x != ia)).collect();

    fn search(
        depth: usize,
        order: &[usize],
        map: &mut [usize],
        used: &mut [bool],
        ok: &dyn Fn(&[usize], &[usize]) -> bool,
    ) -> bool {
        if depth == order.len() {
            return true;
        }
        let x = order[depth];
        for y in 0..used.len() {
            if used[y] {
                continue;
            }
            map[x] = y;
            used[y] = true;
            if ok(map, &order[..=depth]) && search(depth + 1, order, map, used, ok) {
                return true;
            }
            used[y] = false;
        }
        map[x] = usize::MAX;
        false
    }
    search(1, &order, &mut map, &mut used, &consistent)
}

/// Row-sum test: for every `s`, `Σ_r p_rs ‖W_r⊗W_r‖_∞ < 1`. Sufficient for
/// mean-square stability, never necessary.
pub fn block_norm_sufficient(family: &ModeFamily) -> bool {
    let alpha = crate::robust::alphas(family);
    let p = family.joint_p();
    (0..family.mode_count()).all(|s| {
        let sum: f64 = alpha.iter().enumerate().map(|(r, a)| p[(r, s)] * a).sum();
        sum < 1.0
    })
}

/// Per-mode second moments `Q_s(k) = E[x xᵀ · 1{σ(k)=s}]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceState {
    pub q: Vec<DenseMatrix>,
    pub pi: Vec<f64>,
    pub k: usize,
}

impl CovarianceState {
    /// `Q_s(0) = π_s(0)·I`.
    pub fn isotropic(family: &ModeFamily) -> Self {
        Self::from_second_moment(family, &DenseMatrix::identity(family.state_dim()))
            .expect("identity has the family dimension")
    }

    /// `Q_s(0) = π_s(0)·S` for a given initial second moment `S`.
    pub fn from_second_moment(family: &ModeFamily, s: &DenseMatrix) -> Result<Self> {
        let d = family.state_dim();
        if s.rows() != d || s.cols() != d {
            return Err(Error::DimensionMismatch(format!(
                "second moment is {}x{}, state dimension is {d}",
                s.rows(),
                s.cols()
            )));
        }
        let pi = family.joint_pi0().to_vec();
        Ok(Self {
            q: pi.iter().map(|&w| s.scaled(w)).collect(),
            pi,
            k: 0,
        })
    }

    /// `E‖X(k)‖²`, the trace summed over modes.
    pub fn total_trace(&self) -> f64 {
        self.q.iter().map(DenseMatrix::trace).sum()
    }

    /// Row-major vectorizations of all `Q_s` concatenated in mode order.
    pub fn stacked(&self) -> Vec<f64> {
        self.q.iter().flat_map(|m| m.as_slice().iter().copied()).collect()
    }
}

/// One exact step `Q_s ← Σ_r p_rs W_r Q_r W_rᵀ`, `π ← πP`.
pub fn covariance_step(family: &ModeFamily, state: &CovarianceState) -> Result<CovarianceState> {
    let m = family.mode_count();
    let d = family.state_dim();
    if state.q.len() != m || state.pi.len() != m || state.q.iter().any(|q| q.rows() != d || q.cols() != d) {
        return Err(Error::DimensionMismatch(format!(
            "covariance state does not match a family of {m} modes of dimension {d}"
        )));
    }
    let pushed = family
        .matrices()
        .par_iter()
        .zip(&state.q)
        .map(|(w, q)| w.matmul(q)?.matmul(&w.transpose()))
        .collect::<Result<Vec<_>>>()?;
    let p = family.joint_p();
    let mut q = vec![DenseMatrix::zeros(d, d); m];
    let mut pi = vec![0.0; m];
    for (s, qs) in q.iter_mut().enumerate() {
        for (r, mr) in pushed.iter().enumerate() {
            let prs = p[(r, s)];
            if prs != 0.0 {
                for (o, v) in qs.as_mut_slice().iter_mut().zip(mr.as_slice()) {
                    *o += prs * v;
                }
                pi[s] += state.pi[r] * prs;
            }
        }
    }
    Ok(CovarianceState { q, pi, k: state.k + 1 })
}

/// Total trace at `k = 0..=steps`.
pub fn trace_trajectory(family: &ModeFamily, init: &CovarianceState, steps: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(steps + 1);
    let mut st = init.clone();
    out.push(st.total_trace());
    for _ in 0..steps {
        st = covariance_step(family, &st)?;
        out.push(st.total_trace());
    }
    Ok(out)
}

/// Per-step geometric rate `exp(slope)` of a least-squares line through
/// `ln values[k]` over the second half of the series.
pub fn log_linear_rate(values: &[f64]) -> f64 {
    let start = values.len() / 2;
    let pts: Vec<(f64, f64)> = values[start..]
        .iter()
        .enumerate()
        .filter(|(_, v)| **v > 0.0 && v.is_finite())
        .map(|(k, v)| ((start + k) as f64, v.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    (sxy / sxx).exp()
}

/// Agents covered by each reduced mode count, e.g. `{4: 2, 16: 98}`.
pub fn class_mode_counts(report: &StabilityReport) -> BTreeMap<usize, usize> {
    let mut out = BTreeMap::new();
    for s in &report.scopes {
        *out.entry(s.m).or_insert(0) += s.represents.len();
    }
    out
}
