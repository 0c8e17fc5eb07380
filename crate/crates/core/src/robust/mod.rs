//! Robustness of mean-square stability to errors in the transition matrix.
//!
//! With `α_r = ‖W_r⊗W_r‖_∞` and `β_s = 1 − Σ_r p̄_rs α_r`, a perturbation
//! `ΔP` with zero row sums keeps the system stable whenever every column
//! satisfies `Σ_r α_r |Δp_rs| < β_s`. [`estimate_bounds`] turns that
//! condition into per-row bounds `ε_r`: one LP per column and direction,
//! then the smallest magnitude each row attains across all optima.

pub mod lp;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, DenseMatrix};
use crate::switched::ModeFamily;

pub use lp::{lp_solve, LpProblem, LpSolution, LpStatus, Sense};

/// Row-sum tolerance for a perturbation to count as structure-preserving.
pub const ROW_SUM_TOL: f64 = 1e-10;

/// `α_r = ‖W_r ⊗ W_r‖_∞` per mode.
pub fn alphas(family: &ModeFamily) -> Vec<f64> {
    family
        .matrices()
        .par_iter()
        .map(|w| linalg::inf_norm(&linalg::kron(w, w).expect("mode square fits the Kronecker limit")))
        .collect()
}

/// `β_s = 1 − Σ_r p̄_rs α_r`. Negative entries mean the nominal chain is
/// already outside the region the norm condition can certify.
pub fn betas(alpha: &[f64], nominal: &DenseMatrix) -> Result<Vec<f64>> {
    let m = alpha.len();
    check_square(nominal, m)?;
    Ok((0..m)
        .map(|s| 1.0 - (0..m).map(|r| nominal[(r, s)] * alpha[r]).sum::<f64>())
        .collect())
}

fn check_square(p: &DenseMatrix, m: usize) -> Result<()> {
    if p.rows() != m || p.cols() != m {
        return Err(Error::DimensionMismatch(format!(
            "transition matrix is {}x{} for {m} modes",
            p.rows(),
            p.cols()
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundDirection {
    Upper,
    Lower,
}

/// One column of the bound LP: optimize `Σ_r z_r` subject to
/// `Σ_r α_r |z_r| ≤ budget` and `lb_r ≤ z_r ≤ ub_r`. `None` if infeasible.
fn solve_column(
    alpha: &[f64],
    budget: f64,
    lb: &[f64],
    ub: &[f64],
    direction: BoundDirection,
) -> Result<Option<Vec<f64>>> {
    let m = alpha.len();
    let sense = match direction {
        BoundDirection::Upper => Sense::Maximize,
        BoundDirection::Lower => Sense::Minimize,
    };
    // variables: z⁺ then z⁻
    let mut objective = vec![1.0; m];
    objective.extend(std::iter::repeat_n(-1.0, m));
    let mut lower: Vec<f64> = lb.iter().map(|v| v.max(0.0)).collect();
    let mut upper: Vec<f64> = ub.iter().map(|v| v.max(0.0)).collect();
    lower.extend(ub.iter().map(|v| (-v).max(0.0)));
    upper.extend(lb.iter().map(|v| (-v).max(0.0)));
    let coeffs: Vec<f64> = alpha.iter().chain(alpha).copied().collect();
    let problem = LpProblem::new(sense, objective)
        .with_bounds(lower, upper)
        .le(coeffs, budget);
    let sol = lp_solve(&problem)?;
    Ok(match sol.status {
        LpStatus::Optimal => Some((0..m).map(|r| sol.x[r] - sol.x[m + r]).collect()),
        _ => None,
    })
}

/// Optimal `z*` (row-major `m×m`, entry `(r, s)`) of the bound LP in one
/// direction, with constraint right-hand sides `β_s − margin`.
pub fn solve_bound_lp(
    family: &ModeFamily,
    nominal: &DenseMatrix,
    direction: BoundDirection,
    margin: f64,
) -> Result<DenseMatrix> {
    let alpha = alphas(family);
    let beta = betas(&alpha, nominal)?;
    solve_bound_lp_with(&alpha, &beta, nominal, direction, margin)
}

fn solve_bound_lp_with(
    alpha: &[f64],
    beta: &[f64],
    nominal: &DenseMatrix,
    direction: BoundDirection,
    margin: f64,
) -> Result<DenseMatrix> {
    let m = alpha.len();
    let columns = (0..m)
        .into_par_iter()
        .map(|s| {
            let budget = beta[s] - margin;
            if budget < 0.0 {
                return Err(Error::LpInfeasible {
                    column: s,
                    beta: beta[s],
                });
            }
            let lb: Vec<f64> = (0..m).map(|r| -nominal[(r, s)]).collect();
            let ub: Vec<f64> = (0..m).map(|r| 1.0 - nominal[(r, s)]).collect();
            solve_column(alpha, budget, &lb, &ub, direction)?.ok_or(Error::LpInfeasible {
                column: s,
                beta: beta[s],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut z = DenseMatrix::zeros(m, m);
    for (s, col) in columns.iter().enumerate() {
        for (r, v) in col.iter().enumerate() {
            z[(r, s)] = *v;
        }
    }
    Ok(z)
}

/// `ε_r = min( min_s |z_lb[r,s]|, min_s |z_ub[r,s]| )`.
pub fn feasible_bound(z_lb: &DenseMatrix, z_ub: &DenseMatrix) -> Vec<f64> {
    (0..z_lb.rows())
        .map(|r| {
            z_lb.row(r)
                .iter()
                .chain(z_ub.row(r))
                .map(|v| v.abs())
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundResult {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub eps: Vec<f64>,
    /// False when some `β_s ≤ margin`; `eps` is then all zero.
    pub feasible: bool,
    /// Row-major `m×m` optimizers.
    pub z_ub: Vec<f64>,
    pub z_lb: Vec<f64>,
    /// `β_s − Σ_r α_r ε_r` per column: the worst case over `|Δp_rs| ≤ ε_r`.
    pub slack: Vec<f64>,
    pub worst_case_slack: f64,
    /// Whether every column inequality holds strictly at the bounds.
    pub certified: bool,
}

pub fn estimate_bounds(family: &ModeFamily, nominal: &DenseMatrix) -> Result<BoundResult> {
    estimate_bounds_with_margin(family, nominal, 0.0)
}

pub fn estimate_bounds_with_margin(family: &ModeFamily, nominal: &DenseMatrix, margin: f64) -> Result<BoundResult> {
    let alpha = alphas(family);
    estimate_bounds_from_alpha(alpha, nominal, margin)
}

/// Bound estimation from precomputed `α`, e.g. for hand-specified systems.
pub fn estimate_bounds_from_alpha(alpha: Vec<f64>, nominal: &DenseMatrix, margin: f64) -> Result<BoundResult> {
    let m = alpha.len();
    crate::model::check_stochastic(nominal, "nominal")?;
    let beta = betas(&alpha, nominal)?;
    let feasible = beta.iter().all(|&b| b > margin);
    let (z_ub, z_lb, eps) = if feasible {
        let z_ub = solve_bound_lp_with(&alpha, &beta, nominal, BoundDirection::Upper, margin)?;
        let z_lb = solve_bound_lp_with(&alpha, &beta, nominal, BoundDirection::Lower, margin)?;
        let eps = feasible_bound(&z_lb, &z_ub);
        (z_ub.into_vec(), z_lb.into_vec(), eps)
    } else {
        (vec![0.0; m * m], vec![0.0; m * m], vec![0.0; m])
    };
    let slack: Vec<f64> = (0..m)
        .map(|s| beta[s] - alpha.iter().zip(&eps).map(|(a, e)| a * e).sum::<f64>())
        .collect();
    let worst_case_slack = slack.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(BoundResult {
        certified: feasible && worst_case_slack > 0.0,
        alpha,
        beta,
        eps,
        feasible,
        z_ub,
        z_lb,
        slack,
        worst_case_slack,
    })
}

/// Checks `ΔP` against the zero-row-sum structure and the stochastic box,
/// then tests `Σ_r α_r |Δp_rs| < β_s` for every column.
pub fn robust_sufficient(family: &ModeFamily, nominal: &DenseMatrix, delta: &DenseMatrix) -> Result<bool> {
    let m = family.mode_count();
    check_square(nominal, m)?;
    check_square(delta, m)?;
    for r in 0..m {
        let sum: f64 = delta.row(r).iter().sum();
        if sum.abs() > ROW_SUM_TOL {
            return Err(Error::Structure(format!("row {r} of the perturbation sums to {sum:e}")));
        }
        for s in 0..m {
            let v = nominal[(r, s)] + delta[(r, s)];
            if !(-ROW_SUM_TOL..=1.0 + ROW_SUM_TOL).contains(&v) {
                return Err(Error::Structure(format!(
                    "perturbed entry ({r}, {s}) = {v} is not a probability"
                )));
            }
        }
    }
    let alpha = alphas(family);
    let beta = betas(&alpha, nominal)?;
    Ok((0..m).all(|s| {
        let lhs: f64 = (0..m).map(|r| alpha[r] * delta[(r, s)].abs()).sum();
        lhs < beta[s]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stability::{block_norm_sufficient, mss_matrix_with_transition};

    fn scalar_family(a: &[f64], p: DenseMatrix) -> ModeFamily {
        let ms = a.iter().map(|&v| DenseMatrix::from_rows(&[[v]])).collect();
        ModeFamily::from_parts(ms, p, None).unwrap()
    }

    fn nominal() -> DenseMatrix {
        DenseMatrix::from_rows(&[[0.4, 0.6], [0.5, 0.5]])
    }

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((*seed >> 11) as f64) / ((1u64 << 53) as f64)
    }

    #[test]
    fn scalar_alpha_beta() {
        let fam = scalar_family(&[0.5, 1.25], nominal());
        let a = alphas(&fam);
        assert!((a[0] - 0.25).abs() < 1e-15 && (a[1] - 1.5625).abs() < 1e-15);
        let b = betas(&a, &nominal()).unwrap();
        assert!((b[0] - 0.11875).abs() < 1e-14);
        assert_eq!(betas(&[0.0, 0.0], &nominal()).unwrap(), vec![1.0, 1.0]);
        assert_eq!(betas(&[0.3], &DenseMatrix::identity(1)).unwrap(), vec![0.7]);
    }

    #[test]
    fn identity_mode_alpha() {
        let fam = ModeFamily::from_parts(vec![DenseMatrix::identity(3)], DenseMatrix::identity(1), None).unwrap();
        assert_eq!(alphas(&fam), vec![1.0]);
    }

    #[test]
    fn alpha_is_squared_row_norm() {
        let w = DenseMatrix::from_rows(&[[0.3, -0.5], [1.2, 0.1]]);
        let fam = ModeFamily::from_parts(vec![w.clone()], DenseMatrix::identity(1), None).unwrap();
        assert!((alphas(&fam)[0] - linalg::inf_norm(&w).powi(2)).abs() < 1e-14);
    }

    #[test]
    fn scalar_pipeline_values() {
        let fam = scalar_family(&[0.5, 1.25], nominal());
        let r = estimate_bounds(&fam, &nominal()).unwrap();
        assert!(r.feasible);
        let expect_ub = [0.475, 0.275, 0.0, 0.0];
        let expect_lb = [-0.4, -0.275, -0.012, 0.0];
        for (a, b) in r.z_ub.iter().zip(expect_ub) {
            assert!((a - b).abs() < 1e-12, "{:?}", r.z_ub);
        }
        for (a, b) in r.z_lb.iter().zip(expect_lb) {
            assert!((a - b).abs() < 1e-12, "{:?}", r.z_lb);
        }
        assert!((r.eps[0] - 0.275).abs() < 1e-12);
        assert_eq!(r.eps[1], 0.0);
    }

    #[test]
    fn degenerate_box_gives_zero() {
        for dir in [BoundDirection::Upper, BoundDirection::Lower] {
            let z = solve_column(&[1.0, 1.0], 0.5, &[0.0; 2], &[0.0; 2], dir)
                .unwrap()
                .unwrap();
            assert_eq!(z, vec![0.0, 0.0]);
        }
        assert_eq!(
            feasible_bound(&DenseMatrix::zeros(2, 2), &DenseMatrix::zeros(2, 2)),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn column_optimum_matches_grid() {
        let (lb, ub) = ([-1.0, -1.0], [1.0, 1.0]);
        let up = solve_column(&[1.0, 1.0], 0.5, &lb, &ub, BoundDirection::Upper)
            .unwrap()
            .unwrap();
        let down = solve_column(&[1.0, 1.0], 0.5, &lb, &ub, BoundDirection::Lower)
            .unwrap()
            .unwrap();
        let (mut best_hi, mut best_lo) = (f64::NEG_INFINITY, f64::INFINITY);
        for i in -1000..=1000 {
            for j in -1000..=1000 {
                let (x, y) = (i as f64 * 1e-3, j as f64 * 1e-3);
                if x.abs() + y.abs() <= 0.5 + 1e-12 {
                    best_hi = best_hi.max(x + y);
                    best_lo = best_lo.min(x + y);
                }
            }
        }
        assert!((up.iter().sum::<f64>() - best_hi).abs() < 1e-9);
        assert!((down.iter().sum::<f64>() - best_lo).abs() < 1e-9);
        assert!(up.iter().map(|v| v.abs()).sum::<f64>() <= 0.5 + 1e-12);
    }

    #[test]
    fn columns_decouple() {
        // the joint LP over all m² entries equals the per-column optima summed
        let fam = scalar_family(
            &[0.5, 0.7, 0.3],
            DenseMatrix::from_rows(&[[0.2, 0.5, 0.3], [0.3, 0.3, 0.4], [0.6, 0.2, 0.2]]),
        );
        let p = fam.joint_p().clone();
        let alpha = alphas(&fam);
        let beta = betas(&alpha, &p).unwrap();
        let m = 3;
        let z = solve_bound_lp(&fam, &p, BoundDirection::Upper, 0.0).unwrap();
        let mut obj = vec![1.0; m * m];
        obj.extend(vec![-1.0; m * m]);
        let mut lower = vec![0.0; 2 * m * m];
        let mut upper = vec![0.0; 2 * m * m];
        let mut prob_rows = Vec::new();
        for s in 0..m {
            let mut row = vec![0.0; 2 * m * m];
            for r in 0..m {
                let k = r * m + s;
                let (lb, ub) = (-p[(r, s)], 1.0 - p[(r, s)]);
                lower[k] = lb.max(0.0);
                upper[k] = ub.max(0.0);
                lower[m * m + k] = (-ub).max(0.0);
                upper[m * m + k] = (-lb).max(0.0);
                row[k] = alpha[r];
                row[m * m + k] = alpha[r];
            }
            prob_rows.push((row, beta[s]));
        }
        let mut joint = LpProblem::new(Sense::Maximize, obj).with_bounds(lower, upper);
        joint.rows = prob_rows;
        let sol = lp_solve(&joint).unwrap();
        for s in 0..m {
            let per_col: f64 = (0..m).map(|r| z[(r, s)]).sum();
            let joint_col: f64 = (0..m).map(|r| sol.x[r * m + s] - sol.x[m * m + r * m + s]).sum();
            assert!((per_col - joint_col).abs() < 1e-9);
        }
    }

    #[test]
    fn infeasible_nominal_reports_zero() {
        let fam = scalar_family(&[1.1, 1.1], nominal());
        let r = estimate_bounds(&fam, &nominal()).unwrap();
        assert!(!r.feasible && !r.certified);
        assert_eq!(r.eps, vec![0.0, 0.0]);
        assert!(matches!(
            solve_bound_lp(&fam, &nominal(), BoundDirection::Upper, 0.0),
            Err(Error::LpInfeasible { .. })
        ));
    }

    #[test]
    fn sufficient_condition_examples() {
        let fam = scalar_family(&[0.5, 1.25], nominal());
        assert!(robust_sufficient(&fam, &nominal(), &DenseMatrix::zeros(2, 2)).unwrap());
        let big = DenseMatrix::from_rows(&[[0.0, 0.0], [0.3, -0.3]]);
        assert!(!robust_sufficient(&fam, &nominal(), &big).unwrap());
        let bad = DenseMatrix::from_rows(&[[0.1, 0.0], [0.0, 0.0]]);
        assert!(matches!(
            robust_sufficient(&fam, &nominal(), &bad),
            Err(Error::Structure(_))
        ));
        let outside = DenseMatrix::from_rows(&[[-0.5, 0.5], [0.0, 0.0]]);
        assert!(matches!(
            robust_sufficient(&fam, &nominal(), &outside),
            Err(Error::Structure(_))
        ));
    }

    fn random_family(seed: &mut u64, m: usize, d: usize, scale: f64) -> ModeFamily {
        let ms = (0..m)
            .map(|_| {
                let v = (0..d * d).map(|_| (lcg(seed) - 0.5) * scale).collect();
                DenseMatrix::from_row_major(d, d, v).unwrap()
            })
            .collect();
        let mut p = DenseMatrix::zeros(m, m);
        for r in 0..m {
            let row: Vec<f64> = (0..m).map(|_| lcg(seed) + 0.05).collect();
            let s: f64 = row.iter().sum();
            for c in 0..m {
                p[(r, c)] = row[c] / s;
            }
        }
        ModeFamily::from_parts(ms, p, None).unwrap()
    }

    #[test]
    fn accepted_perturbations_are_stable() {
        let mut seed = 11u64;
        let mut accepted = 0;
        for _ in 0..400 {
            let m = 2 + (lcg(&mut seed) * 3.0) as usize;
            let fam = random_family(&mut seed, m, 2, 0.9);
            let p = fam.joint_p().clone();
            let mut delta = DenseMatrix::zeros(m, m);
            for r in 0..m {
                let (a, b) = (
                    (lcg(&mut seed) * m as f64) as usize,
                    (lcg(&mut seed) * m as f64) as usize,
                );
                let room = p[(r, a)].min(1.0 - p[(r, b)]);
                if a != b {
                    let t = lcg(&mut seed) * room;
                    delta[(r, a)] -= t;
                    delta[(r, b)] += t;
                }
            }
            if robust_sufficient(&fam, &p, &delta).unwrap() {
                accepted += 1;
                let perturbed = p.add(&delta).unwrap();
                let rho = mss_matrix_with_transition(&fam, &perturbed)
                    .unwrap()
                    .spectral_radius()
                    .unwrap();
                assert!(rho < 1.0 + 1e-9);
            }
        }
        assert!(accepted > 20, "only {accepted} accepted");
    }

    #[test]
    fn shrinking_modes_never_shrinks_eps() {
        let mut seed = 5u64;
        for _ in 0..30 {
            let fam = random_family(&mut seed, 3, 2, 0.6);
            let p = fam.joint_p().clone();
            if !block_norm_sufficient(&fam) {
                continue;
            }
            let base = estimate_bounds(&fam, &p).unwrap();
            let shrunk: Vec<DenseMatrix> = fam.matrices().iter().map(|w| w.scaled(0.8)).collect();
            let fam2 = ModeFamily::from_parts(shrunk, p.clone(), None).unwrap();
            let r2 = estimate_bounds(&fam2, &p).unwrap();
            for (a, b) in base.eps.iter().zip(&r2.eps) {
                assert!(b + 1e-12 >= *a, "{:?} -> {:?}", base.eps, r2.eps);
            }
        }
    }

    #[test]
    fn hyperplane_perturbation_is_admissible() {
        let mut seed = 9u64;
        for _ in 0..30 {
            let fam = random_family(&mut seed, 3, 2, 0.6);
            let p = fam.joint_p().clone();
            let res = estimate_bounds(&fam, &p).unwrap();
            if !res.feasible {
                continue;
            }
            for r in 0..3 {
                for (a, b) in [(0, 1), (1, 2), (0, 2)] {
                    let mut delta = DenseMatrix::zeros(3, 3);
                    delta[(r, a)] = res.eps[r];
                    delta[(r, b)] = -res.eps[r];
                    let sum: f64 = delta.row(r).iter().sum();
                    assert!(sum.abs() < 1e-15);
                    let alpha = &res.alpha;
                    for s in 0..3 {
                        let lhs: f64 = (0..3).map(|k| alpha[k] * delta[(k, s)].abs()).sum();
                        assert!(lhs <= res.beta[s] + 1e-12);
                    }
                }
            }
        }
    }
}
