#![allow(dead_code)]

use mjls_stab::linalg::DenseMatrix;
use mjls_stab::model::{DelayChain, DncsModel};
use mjls_stab::stability::{log_linear_rate, trace_trajectory, CovarianceState};
use mjls_stab::switched::ModeFamily;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DenseMatrix {
    let v = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0) * scale).collect();
    DenseMatrix::from_row_major(rows, cols, v).unwrap()
}

/// Row-stochastic with entries bounded away from zero only by chance.
pub fn random_stochastic(rng: &mut ChaCha8Rng, m: usize) -> DenseMatrix {
    let mut p = DenseMatrix::zeros(m, m);
    for r in 0..m {
        let row: Vec<f64> = (0..m).map(|_| rng.gen::<f64>() + 1e-3).collect();
        let s: f64 = row.iter().sum();
        for c in 0..m {
            p[(r, c)] = row[c] / s;
        }
        let drift: f64 = 1.0 - p.row(r).iter().sum::<f64>();
        p[(r, m - 1)] += drift;
    }
    p
}

pub fn random_distribution(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..m).map(|_| rng.gen::<f64>() + 1e-3).collect();
    let s: f64 = v.iter().sum();
    let mut out: Vec<f64> = v.iter().map(|x| x / s).collect();
    let drift = 1.0 - out.iter().sum::<f64>();
    out[m - 1] += drift;
    out
}

/// Jump system with `m ≤ 4` modes of size `d ≤ 4`, scaled so the test
/// radius lands on both sides of 1.
pub fn random_family(rng: &mut ChaCha8Rng, scale_range: (f64, f64)) -> ModeFamily {
    let m = rng.gen_range(1..=4);
    let d = rng.gen_range(1..=4);
    let scale = rng.gen_range(scale_range.0..scale_range.1) / (d as f64).sqrt();
    let ms = (0..m).map(|_| random_matrix(rng, d, d, scale)).collect();
    let p = random_stochastic(rng, m);
    let pi0 = random_distribution(rng, m);
    ModeFamily::from_parts(ms, p, Some(pi0)).unwrap()
}

/// Scalar-state network on `N ≤ 3` agents with one-step delays and a
/// random subset of links.
pub fn random_network(rng: &mut ChaCha8Rng) -> DncsModel {
    let n_agents = rng.gen_range(1..=3);
    let mut blocks = Vec::new();
    for i in 1..=n_agents {
        blocks.push(((i, i), DenseMatrix::from_rows(&[[rng.gen_range(-1.0..1.0)]])));
        for j in 1..=n_agents {
            if i != j && rng.gen_bool(0.7) {
                blocks.push(((i, j), DenseMatrix::from_rows(&[[rng.gen_range(-0.8..0.8)]])));
            }
        }
    }
    let p = random_stochastic(rng, 2);
    let pi0 = random_distribution(rng, 2);
    DncsModel::new(n_agents, 1, 1, blocks, DelayChain::new(p, pi0).unwrap()).unwrap()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trend {
    Decay,
    Growth,
}

/// Decay or growth of `Σ_s tr Q_s(k)` over `steps` exact steps from the
/// isotropic start. Decided by the 1e-8 / 1e8 thresholds when reached,
/// otherwise by the fitted geometric rate.
pub fn covariance_trend(family: &ModeFamily, steps: usize) -> (Trend, f64) {
    let tr = trace_trajectory(family, &CovarianceState::isotropic(family), steps).unwrap();
    let last = tr[steps] / tr[0];
    let rate = log_linear_rate(&tr);
    let trend = if last < 1e-8 {
        Trend::Decay
    } else if last > 1e8 || !last.is_finite() {
        Trend::Growth
    } else if rate < 1.0 {
        Trend::Decay
    } else {
        Trend::Growth
    };
    (trend, rate)
}
