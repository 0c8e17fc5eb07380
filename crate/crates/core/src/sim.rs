//! Monte Carlo simulation of the delayed network.
//!
//! Every directed link runs its own copy of the delay chain. At step `k`
//! agent `i` computes `x_i(k+1) = Σ_j A_ij x_j(k − τ_ij(k))`, after which
//! all links draw their next delay. States before time 0 equal `x(0)`.
//!
//! Each trial owns a ChaCha8 stream selected by `(seed, trial)`, and the
//! draw order inside a trial is fixed: initial coordinates, initial delays,
//! then one delay update per link per step. Trials are summed in fixed-size
//! chunks that are merged pairwise, so results do not depend on the number
//! of threads.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::model::DncsModel;
use crate::switched::{self, ModeFamily, Scope};

/// Trials per reduction chunk.
const CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialState {
    /// Every coordinate independently uniform on `[-1, 1]`.
    Uniform,
    Explicit(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub steps: usize,
    pub trials: usize,
    pub seed: u64,
    pub init: InitialState,
}

impl SimConfig {
    pub fn new(steps: usize, trials: usize, seed: u64) -> Self {
        Self {
            steps,
            trials,
            seed,
            init: InitialState::Uniform,
        }
    }

    fn validate(&self, state_len: usize) -> Result<()> {
        if self.steps == 0 || self.trials == 0 {
            return Err(Error::InvalidArgument("steps and trials must be at least 1".into()));
        }
        if let InitialState::Explicit(x) = &self.init {
            if x.len() != state_len {
                return Err(Error::DimensionMismatch(format!(
                    "initial state has {} entries, expected {state_len}",
                    x.len()
                )));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite);
            }
        }
        Ok(())
    }
}

/// One realization, rows `k = 0..steps`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub agents: usize,
    pub dim: usize,
    /// `states[k]` is `x(k)` stacked by agent.
    pub states: Vec<Vec<f64>>,
    pub sqnorm: Vec<f64>,
    pub links: Vec<(usize, usize)>,
    /// `delays[k][t]` is the delay on link `t` used to form `x(k+1)`.
    pub delays: Vec<Vec<usize>>,
}

fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

fn draw(rng: &mut ChaCha8Rng, dist: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (k, &p) in dist.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    // rounding left a sliver above the last cumulative sum
    dist.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

fn initial_state(init: &InitialState, len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    match init {
        InitialState::Uniform => (0..len).map(|_| rng.gen_range(-1.0..=1.0)).collect(),
        InitialState::Explicit(x) => x.clone(),
    }
}

struct Term<'a> {
    sender: usize,
    block: &'a DenseMatrix,
    /// Index into the link list, `None` for the undelayed self term.
    link: Option<usize>,
}

/// Precomputed per-agent update terms.
struct Network<'a> {
    model: &'a DncsModel,
    links: Vec<(usize, usize)>,
    terms: Vec<Vec<Term<'a>>>,
}

impl<'a> Network<'a> {
    fn new(model: &'a DncsModel) -> Self {
        let links = switched::enumerate_links(model, Scope::Global)
            .expect("global scope always resolves")
            .as_slice()
            .to_vec();
        let mut terms: Vec<Vec<Term>> = (0..model.agents()).map(|_| Vec::new()).collect();
        for ((i, j), block) in model.blocks() {
            let link = if i == j {
                None
            } else {
                Some(links.binary_search(&(i, j)).expect("stored block is a link"))
            };
            terms[i - 1].push(Term {
                sender: j - 1,
                block,
                link,
            });
        }
        Self { model, links, terms }
    }

    /// Runs one trial; `record` receives `(k, x(k), delays(k))` per row.
    fn run<F: FnMut(usize, &[f64], &[usize])>(&self, config: &SimConfig, trial: usize, mut record: F) {
        let n = self.model.dim();
        let size = self.model.agents() * n;
        let q = self.model.q();
        let chain = self.model.chain();
        let mut rng = trial_rng(config.seed, trial);
        let x0 = initial_state(&config.init, size, &mut rng);
        let mut delays: Vec<usize> = (0..self.links.len()).map(|_| draw(&mut rng, chain.pi0())).collect();
        // ring buffer of the last q states, history[(k - d) mod q] = x(k - d)
        let mut history = vec![x0; q];
        for k in 0..config.steps {
            let cur = k % q;
            record(k, &history[cur], &delays);
            if k + 1 == config.steps {
                break;
            }
            let mut next = vec![0.0; size];
            for (i, terms) in self.terms.iter().enumerate() {
                let out = &mut next[i * n..(i + 1) * n];
                for t in terms {
                    let d = t.link.map_or(0, |l| delays[l]);
                    let src = &history[(k + q - d) % q][t.sender * n..(t.sender + 1) * n];
                    for (r, o) in out.iter_mut().enumerate() {
                        *o += t.block.row(r).iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
            }
            for d in delays.iter_mut() {
                *d = draw(&mut rng, chain.p().row(*d));
            }
            history[(k + 1) % q] = next;
        }
    }
}

fn sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

pub fn simulate_trajectory(model: &DncsModel, config: &SimConfig, trial: usize) -> Result<TrajectoryRecord> {
    config.validate(model.agents() * model.dim())?;
    let net = Network::new(model);
    let mut rec = TrajectoryRecord {
        agents: model.agents(),
        dim: model.dim(),
        states: Vec::with_capacity(config.steps),
        sqnorm: Vec::with_capacity(config.steps),
        links: net.links.clone(),
        delays: Vec::with_capacity(config.steps),
    };
    net.run(config, trial, |_, x, d| {
        rec.states.push(x.to_vec());
        rec.sqnorm.push(sq(x));
        rec.delays.push(d.to_vec());
    });
    Ok(rec)
}

/// Sums `per_trial(t)` over all trials in fixed chunks merged pairwise.
fn reduce_trials<F>(trials: usize, len: usize, per_trial: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    let chunks: Vec<Vec<f64>> = (0..trials.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![0.0; len];
            for t in c * CHUNK..((c + 1) * CHUNK).min(trials) {
                per_trial(t, &mut acc);
            }
            acc
        })
        .collect();
    pairwise_sum(chunks)
}

fn pairwise_sum(mut parts: Vec<Vec<f64>>) -> Vec<f64> {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                for (x, y) in a.iter_mut().zip(&b) {
                    *x += y;
                }
            }
            next.push(a);
        }
        parts = next;
    }
    parts.pop().unwrap_or_default()
}

/// Sample mean of `‖x(k)‖²` over the trials, `k = 0..steps`.
pub fn estimate_ms(model: &DncsModel, config: &SimConfig) -> Result<Vec<f64>> {
    Ok(estimate_moments(model, config)?.0)
}

/// Sample mean and sample variance of `‖x(k)‖²` per step.
pub fn estimate_moments(model: &DncsModel, config: &SimConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    config.validate(model.agents() * model.dim())?;
    let net = Network::new(model);
    let steps = config.steps;
    let sums = reduce_trials(config.trials, 2 * steps, |t, acc| {
        net.run(config, t, |k, x, _| {
            let v = sq(x);
            acc[k] += v;
            acc[steps + k] += v * v;
        })
    });
    Ok(moments(&sums, steps, config.trials))
}

fn moments(sums: &[f64], steps: usize, trials: usize) -> (Vec<f64>, Vec<f64>) {
    let nt = trials as f64;
    let mean: Vec<f64> = sums[..steps].iter().map(|s| s / nt).collect();
    let var = (0..steps)
        .map(|k| {
            if trials < 2 {
                0.0
            } else {
                ((sums[steps + k] - nt * mean[k] * mean[k]) / (nt - 1.0)).max(0.0)
            }
        })
        .collect();
    (mean, var)
}

/// Mean and variance of `‖x(k)‖²` for a generic Markov jump system
/// `x(k+1) = W_σ(k) x(k)` with `σ(0) ~ π(0)`.
pub fn estimate_family_moments(family: &ModeFamily, config: &SimConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = family.state_dim();
    config.validate(d)?;
    let steps = config.steps;
    let sums = reduce_trials(config.trials, 2 * steps, |t, acc| {
        let mut rng = trial_rng(config.seed, t);
        let mut x = initial_state(&config.init, d, &mut rng);
        let mut mode = draw(&mut rng, family.joint_pi0());
        let mut y = vec![0.0; d];
        for k in 0..steps {
            let v = sq(&x);
            acc[k] += v;
            acc[steps + k] += v * v;
            if k + 1 == steps {
                break;
            }
            family.matrices()[mode].matvec_into(&x, &mut y);
            std::mem::swap(&mut x, &mut y);
            mode = draw(&mut rng, family.joint_p().row(mode));
        }
    });
    Ok(moments(&sums, steps, config.trials))
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

/// Trajectory CSV: `k,x_<agent>_<coord>...,sqnorm`.
pub fn write_trajectory_csv<W: Write>(rec: &TrajectoryRecord, mut w: W) -> Result<()> {
    let mut header = String::from("k");
    for a in 1..=rec.agents {
        for c in 1..=rec.dim {
            header.push_str(&format!(",x_{a}_{c}"));
        }
    }
    header.push_str(",sqnorm");
    writeln!(w, "{header}")?;
    for (k, (x, s)) in rec.states.iter().zip(&rec.sqnorm).enumerate() {
        let mut line = k.to_string();
        for v in x {
            line.push(',');
            line.push_str(&fmt(*v));
        }
        line.push(',');
        line.push_str(&fmt(*s));
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Mean-square CSV: `k,mean_sq`.
pub fn write_ms_csv<W: Write>(mean_sq: &[f64], mut w: W) -> Result<()> {
    writeln!(w, "k,mean_sq")?;
    for (k, v) in mean_sq.iter().enumerate() {
        writeln!(w, "{k},{}", fmt(*v))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_global_matrix, DelayChain};
    use crate::stability::{covariance_step, CovarianceState};

    fn two_agent() -> DncsModel {
        let b = |v: f64| DenseMatrix::from_rows(&[[v]]);
        DncsModel::new(
            2,
            1,
            1,
            vec![((1, 1), b(0.5)), ((2, 2), b(0.5)), ((1, 2), b(0.1)), ((2, 1), b(0.1))],
            DelayChain::two_state_benchmark(),
        )
        .unwrap()
    }

    #[test]
    fn zero_initial_state_stays_zero() {
        let m = two_agent();
        let cfg = SimConfig {
            init: InitialState::Explicit(vec![0.0, 0.0]),
            ..SimConfig::new(20, 1, 3)
        };
        let rec = simulate_trajectory(&m, &cfg, 0).unwrap();
        assert!(rec.states.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn undelayed_matches_global_iteration() {
        let b = |v: f64| DenseMatrix::from_rows(&[[v]]);
        let m = DncsModel::new(
            2,
            1,
            0,
            vec![((1, 1), b(0.5)), ((2, 2), b(0.4)), ((1, 2), b(0.3))],
            DelayChain::undelayed(),
        )
        .unwrap();
        let cfg = SimConfig::new(10, 1, 9);
        let rec = simulate_trajectory(&m, &cfg, 0).unwrap();
        let a = build_global_matrix(&m);
        let mut x = rec.states[0].clone();
        for k in 1..10 {
            x = a.matvec(&x).unwrap();
            for (u, v) in x.iter().zip(&rec.states[k]) {
                assert!((u - v).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn unstable_single_mode_grows() {
        let m = DncsModel::new(
            1,
            1,
            0,
            vec![((1, 1), DenseMatrix::from_rows(&[[1.1]]))],
            DelayChain::undelayed(),
        )
        .unwrap();
        let ms = estimate_ms(&m, &SimConfig::new(100, 10, 1)).unwrap();
        assert!(ms.windows(2).all(|w| w[1] > w[0]));
        assert!(ms[99] > 1e3 * ms[0]);
    }

    #[test]
    fn second_moment_matches_covariance_oracle() {
        let m = two_agent();
        let fam = switched::build_mode_family(&m, Scope::Global).unwrap();
        let steps = 6;
        let trials = 100_000;
        let (mean, var) = estimate_moments(&m, &SimConfig::new(steps, trials, 2024)).unwrap();

        // X(0) = [x0; x0] with x0 uniform on [-1,1]²: second moment [[S,S],[S,S]], S = I/3
        let s = DenseMatrix::identity(2).scaled(1.0 / 3.0);
        let mut x0 = DenseMatrix::zeros(4, 4);
        for (r, c) in [(0, 0), (0, 2), (2, 0), (2, 2)] {
            x0.set_block(r, c, &s);
        }
        let mut st = CovarianceState::from_second_moment(&fam, &x0).unwrap();
        for k in 0..steps {
            let predicted: f64 = st.q.iter().map(|q| q.block(0, 0, 2, 2).trace()).sum();
            let se = (var[k] / trials as f64).sqrt();
            assert!(
                (mean[k] - predicted).abs() < 3.0 * se + 1e-15,
                "k={k}: {} vs {predicted} (se {se})",
                mean[k]
            );
            st = covariance_step(&fam, &st).unwrap();
        }
    }

    #[test]
    fn delay_marginals_reach_stationary() {
        let m = two_agent();
        let rec = simulate_trajectory(&m, &SimConfig::new(100_000, 1, 77), 0).unwrap();
        let pi = m.chain().stationary();
        for link in 0..rec.links.len() {
            let ones = rec.delays.iter().filter(|d| d[link] == 1).count() as f64;
            let freq = ones / rec.delays.len() as f64;
            assert!((freq - pi[1]).abs() < 0.01, "link {link}: {freq}");
        }
    }

    #[test]
    fn deterministic_and_thread_independent() {
        let m = two_agent();
        let cfg = SimConfig::new(50, 300, 5);
        let a = estimate_ms(&m, &cfg).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| estimate_ms(&m, &cfg).unwrap());
        assert_eq!(a, b);
        let mut x = Vec::new();
        let mut y = Vec::new();
        write_ms_csv(&a, &mut x).unwrap();
        write_ms_csv(&b, &mut y).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn csv_layout() {
        let m = two_agent();
        let rec = simulate_trajectory(&m, &SimConfig::new(3, 1, 1), 0).unwrap();
        let mut out = Vec::new();
        write_trajectory_csv(&rec, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "k,x_1_1,x_2_1,sqnorm");
        assert!(lines[1].starts_with("0,"));
        let mut out = Vec::new();
        write_ms_csv(&[1.0, 0.5], &mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "k,mean_sq\n0,1.0000000000000000e0\n1,5.0000000000000000e-1\n"
        );
    }

    #[test]
    fn rejects_bad_config() {
        let m = two_agent();
        assert!(estimate_ms(&m, &SimConfig::new(0, 1, 1)).is_err());
        let cfg = SimConfig {
            init: InitialState::Explicit(vec![1.0]),
            ..SimConfig::new(3, 1, 1)
        };
        assert!(simulate_trajectory(&m, &cfg, 0).is_err());
    }
}
