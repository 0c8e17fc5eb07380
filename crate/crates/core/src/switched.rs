//! Switched-system representation of a delayed network.
//!
//! Every directed link carries its own delay in `0..=tau_d`. A *mode* is one
//! joint assignment of delays to the links in scope; its matrix is the
//! companion-form transition of the augmented state
//! `[x(k); x(k-1); …; x(k-tau_d)]`. Delay configurations are indexed
//! big-endian over the ascending link order (first link most significant),
//! which is exactly the row/column order of the Kronecker power of the
//! per-link transition matrix.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::{self, DenseMatrix};
use crate::model::{self, DncsModel};

/// Default cap on the number of modes a family may enumerate (2^20).
pub const DEFAULT_MODE_CAP: usize = 1 << 20;

/// Which part of the network an analysis covers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scope {
    /// All agents and all links.
    Global,
    /// Agent `i` (one-based) and its neighborhood.
    Agent(usize),
    /// A family given directly by its mode matrices.
    Custom,
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scope::Global => write!(f, "global"),
            Scope::Agent(i) => write!(f, "agent:{i}"),
            Scope::Custom => write!(f, "custom"),
        }
    }
}

impl Serialize for Scope {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// Directed links `(receiver, sender)` in ascending order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct LinkSet {
    links: Vec<(usize, usize)>,
}

impl LinkSet {
    pub fn as_slice(&self) -> &[(usize, usize)] {
        &self.links
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }
}

/// One joint delay assignment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DelayConfig {
    digits: Vec<usize>,
    index: usize,
}

impl DelayConfig {
    pub fn from_index(index: usize, q: usize, links: usize) -> Self {
        let mut digits = vec![0; links];
        let mut rest = index;
        for d in digits.iter_mut().rev() {
            *d = rest % q;
            rest /= q;
        }
        debug_assert_eq!(rest, 0, "index {index} out of range for q^{links}");
        Self { digits, index }
    }

    pub fn from_digits(digits: Vec<usize>, q: usize) -> Result<Self> {
        let mut index = 0usize;
        for (link, &d) in digits.iter().enumerate() {
            if d >= q {
                return Err(Error::DigitOutOfRange { link, digit: d, q });
            }
            index = index
                .checked_mul(q)
                .and_then(|v| v.checked_add(d))
                .ok_or_else(|| Error::InvalidArgument("delay configuration index overflows".into()))?;
        }
        Ok(Self { digits, index })
    }

    pub fn digits(&self) -> &[usize] {
        &self.digits
    }

    pub fn index(&self) -> usize {
        self.index
    }
}

/// Number of modes `q^L`, kept symbolic when it does not fit 62 bits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModeCount {
    Exact(u64),
    Power { base: usize, exponent: usize },
}

impl ModeCount {
    pub fn of(base: usize, exponent: usize) -> Self {
        match (base as u64).checked_pow(exponent as u32) {
            Some(v) if exponent <= u32::MAX as usize && v <= 1u64 << 62 => ModeCount::Exact(v),
            _ if base <= 1 => ModeCount::Exact(1),
            _ => ModeCount::Power { base, exponent },
        }
    }

    pub fn exact(&self) -> Option<u64> {
        match *self {
            ModeCount::Exact(v) => Some(v),
            ModeCount::Power { .. } => None,
        }
    }
}

impl Serialize for ModeCount {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        match *self {
            ModeCount::Exact(v) => s.serialize_u64(v),
            ModeCount::Power { base, exponent } => {
                let mut st = s.serialize_struct("ModeCount", 2)?;
                st.serialize_field("base", &base)?;
                st.serialize_field("exponent", &exponent)?;
                st.end()
            }
        }
    }
}

/// Mode matrices of one scope together with their joint Markov chain.
#[derive(Clone, Debug)]
pub struct ModeFamily {
    scope: Scope,
    members: Vec<usize>,
    links: LinkSet,
    q: usize,
    state_dim: usize,
    matrices: Vec<DenseMatrix>,
    joint_p: DenseMatrix,
    joint_pi0: Vec<f64>,
}

impl ModeFamily {
    /// Family given directly by its mode matrices and transition matrix,
    /// for Markov jump systems that do not come from a network model.
    pub fn from_parts(matrices: Vec<DenseMatrix>, joint_p: DenseMatrix, pi0: Option<Vec<f64>>) -> Result<Self> {
        let m = matrices.len();
        if m == 0 {
            return Err(Error::InvalidArgument("a mode family needs at least one mode".into()));
        }
        let d = matrices[0].rows();
        if let Some((k, w)) = matrices
            .iter()
            .enumerate()
            .find(|(_, w)| w.rows() != d || w.cols() != d)
        {
            return Err(Error::DimensionMismatch(format!(
                "mode {k} is {}x{}, expected {d}x{d}",
                w.rows(),
                w.cols()
            )));
        }
        if joint_p.rows() != m || joint_p.cols() != m {
            return Err(Error::DimensionMismatch(format!(
                "transition matrix is {}x{} for {m} modes",
                joint_p.rows(),
                joint_p.cols()
            )));
        }
        model::check_stochastic(&joint_p, "P")?;
        let joint_pi0 = pi0.unwrap_or_else(|| vec![1.0 / m as f64; m]);
        if joint_pi0.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "initial distribution has {} entries for {m} modes",
                joint_pi0.len()
            )));
        }
        Ok(Self {
            scope: Scope::Custom,
            members: Vec::new(),
            links: LinkSet::default(),
            q: 1,
            state_dim: d,
            matrices,
            joint_p,
            joint_pi0,
        })
    }

    /// Same modes under a different transition matrix.
    pub fn with_transition(&self, p: DenseMatrix) -> Result<Self> {
        if p.rows() != self.mode_count() || p.cols() != self.mode_count() {
            return Err(Error::DimensionMismatch(format!(
                "transition matrix is {}x{} for {} modes",
                p.rows(),
                p.cols(),
                self.mode_count()
            )));
        }
        model::check_stochastic(&p, "P")?;
        Ok(Self {
            joint_p: p,
            ..self.clone()
        })
    }

    pub fn scope(&self) -> Scope {
        self.scope
    }

    /// Agents covered by the scope, ascending.
    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn links(&self) -> &LinkSet {
        &self.links
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn mode_count(&self) -> usize {
        self.matrices.len()
    }

    pub fn matrices(&self) -> &[DenseMatrix] {
        &self.matrices
    }

    pub fn joint_p(&self) -> &DenseMatrix {
        &self.joint_p
    }

    pub fn joint_pi0(&self) -> &[f64] {
        &self.joint_pi0
    }
}

/// Agents covered by a scope, ascending.
pub fn scope_members(model: &DncsModel, scope: Scope) -> Result<Vec<usize>> {
    match scope {
        Scope::Global => Ok((1..=model.agents()).collect()),
        Scope::Agent(i) => model::neighborhood(model, i),
        Scope::Custom => Err(Error::InvalidArgument("custom scope has no network members".into())),
    }
}

/// Directed links carrying a delay within the scope: every stored
/// off-diagonal block whose endpoints both lie in the scope.
pub fn enumerate_links(model: &DncsModel, scope: Scope) -> Result<LinkSet> {
    let members = scope_members(model, scope)?;
    let links = model
        .blocks()
        .map(|(k, _)| k)
        .filter(|&(l, j)| l != j && members.binary_search(&l).is_ok() && members.binary_search(&j).is_ok())
        .collect();
    Ok(LinkSet { links })
}

pub fn mode_count(model: &DncsModel, scope: Scope) -> Result<ModeCount> {
    Ok(ModeCount::of(model.q(), enumerate_links(model, scope)?.len()))
}

/// Companion-form mode matrix for one delay configuration.
pub fn build_mode_matrix(model: &DncsModel, scope: Scope, config: &DelayConfig) -> Result<DenseMatrix> {
    let members = scope_members(model, scope)?;
    let links = enumerate_links(model, scope)?;
    assemble_mode(model, &members, &links, config.digits())
}

fn assemble_mode(model: &DncsModel, members: &[usize], links: &LinkSet, digits: &[usize]) -> Result<DenseMatrix> {
    if digits.len() != links.len() {
        return Err(Error::DimensionMismatch(format!(
            "configuration has {} digits for {} links",
            digits.len(),
            links.len()
        )));
    }
    let q = model.q();
    let n = model.dim();
    let size = members.len() * n;
    let pos = |a: usize| members.binary_search(&a).expect("link endpoint in scope");
    let mut w = DenseMatrix::zeros(size * q, size * q);
    // self terms are never delayed
    for &a in members {
        let p = pos(a);
        w.set_block(p * n, p * n, model.block(a, a).expect("diagonal block present"));
    }
    for (t, (&(l, j), &d)) in links.as_slice().iter().zip(digits).enumerate() {
        if d >= q {
            return Err(Error::DigitOutOfRange { link: t, digit: d, q });
        }
        let block = model.block(l, j).expect("link has a stored block");
        w.set_block(pos(l) * n, d * size + pos(j) * n, block);
    }
    for s in 0..q.saturating_sub(1) {
        w.set_block((s + 1) * size, s * size, &DenseMatrix::identity(size));
    }
    Ok(w)
}

pub fn build_mode_family(model: &DncsModel, scope: Scope) -> Result<ModeFamily> {
    build_mode_family_with_cap(model, scope, DEFAULT_MODE_CAP)
}

/// Enumerates all `q^L` modes of the scope, failing loudly above `cap`.
pub fn build_mode_family_with_cap(model: &DncsModel, scope: Scope, cap: usize) -> Result<ModeFamily> {
    let members = scope_members(model, scope)?;
    let links = enumerate_links(model, scope)?;
    let q = model.q();
    let m = match ModeCount::of(q, links.len()) {
        ModeCount::Exact(v) if v <= cap as u64 => v as usize,
        _ => {
            return Err(Error::ModeCapExceeded {
                scope: scope.to_string(),
                q,
                links: links.len(),
                cap,
            })
        }
    };
    let matrices = (0..m)
        .into_par_iter()
        .map(|idx| {
            let cfg = DelayConfig::from_index(idx, q, links.len());
            assemble_mode(model, &members, &links, cfg.digits())
        })
        .collect::<Result<Vec<_>>>()?;
    let joint_p = linalg::kron_power(model.chain().p(), links.len())?;
    let pi0 = DenseMatrix::from_rows(&[model.chain().pi0()]);
    let joint_pi0 = linalg::kron_power(&pi0, links.len())?.into_vec();
    Ok(ModeFamily {
        scope,
        state_dim: members.len() * model.dim() * q,
        members,
        links,
        q,
        matrices,
        joint_p,
        joint_pi0,
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FamilyDoc {
    dim: usize,
    modes: Vec<Vec<f64>>,
    #[serde(rename = "P")]
    p: Vec<f64>,
    #[serde(default)]
    pi0: Option<Vec<f64>>,
}

/// Parses a Markov jump system given directly by its modes:
/// `{"dim": d, "modes": [[d² row-major], …], "P": [m² row-major], "pi0": [m]}`.
/// `pi0` defaults to uniform.
pub fn load_family(text: &str) -> Result<ModeFamily> {
    let doc: FamilyDoc = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let m = doc.modes.len();
    let matrices = doc
        .modes
        .into_iter()
        .enumerate()
        .map(|(k, v)| {
            if v.len() != doc.dim * doc.dim {
                return Err(Error::InvalidModel {
                    path: format!("modes[{k}]"),
                    reason: format!("expected {} entries, got {}", doc.dim * doc.dim, v.len()),
                });
            }
            DenseMatrix::from_row_major(doc.dim, doc.dim, v).map_err(|e| Error::InvalidModel {
                path: format!("modes[{k}]"),
                reason: e.to_string(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if doc.p.len() != m * m {
        return Err(Error::InvalidModel {
            path: "P".into(),
            reason: format!("expected {} entries for {m} modes, got {}", m * m, doc.p.len()),
        });
    }
    let p = DenseMatrix::from_row_major(m, m, doc.p)?;
    ModeFamily::from_parts(matrices, p, doc.pi0)
}
