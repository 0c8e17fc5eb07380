//! Small dense linear programs.
//!
//! Two-phase tableau simplex. Variables may carry any combination of finite
//! or infinite bounds; they are shifted, reflected or split so the tableau
//! only ever sees `y ≥ 0`. Pricing is Dantzig's rule until a run of
//! degenerate pivots suggests cycling, after which Bland's rule takes over.

use serde::Serialize;

use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-11;
const FEAS_TOL: f64 = 1e-9;
/// Consecutive degenerate pivots tolerated before switching to Bland's rule.
const DEGENERATE_RUN: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Maximize,
    Minimize,
}

/// `opt cᵀx  s.t.  A x ≤ b,  lower ≤ x ≤ upper`.
#[derive(Clone, Debug)]
pub struct LpProblem {
    pub sense: Sense,
    pub objective: Vec<f64>,
    /// Inequality rows `(coefficients, rhs)`, each meaning `a·x ≤ rhs`.
    pub rows: Vec<(Vec<f64>, f64)>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LpProblem {
    /// Problem with `n` free variables and no rows.
    pub fn new(sense: Sense, objective: Vec<f64>) -> Self {
        let n = objective.len();
        Self {
            sense,
            objective,
            rows: Vec::new(),
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn with_bounds(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    pub fn le(mut self, coeffs: Vec<f64>, rhs: f64) -> Self {
        self.rows.push((coeffs, rhs));
        self
    }

    fn validate(&self) -> Result<()> {
        let n = self.objective.len();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{n} variables but {} lower and {} upper bounds",
                self.lower.len(),
                self.upper.len()
            )));
        }
        if let Some((k, _)) = self.rows.iter().enumerate().find(|(_, r)| r.0.len() != n) {
            return Err(Error::DimensionMismatch(format!(
                "row {k} does not have {n} coefficients"
            )));
        }
        if self.objective.iter().any(|v| !v.is_finite())
            || self
                .rows
                .iter()
                .any(|(a, b)| !b.is_finite() || a.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::NonFinite);
        }
        if let Some(j) =
            (0..n).find(|&j| self.lower[j].is_nan() || self.upper[j].is_nan() || self.lower[j] > self.upper[j])
        {
            return Err(Error::InvalidArgument(format!(
                "variable {j} has bounds [{}, {}]",
                self.lower[j], self.upper[j]
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Optimal point; empty unless `status` is optimal.
    pub x: Vec<f64>,
    pub objective: f64,
}

/// How an original variable is expressed in tableau variables.
#[derive(Clone, Copy)]
enum Map {
    /// `x = lo + y`
    Shift { y: usize, lo: f64 },
    /// `x = hi − y`
    Reflect { y: usize, hi: f64 },
    /// `x = y⁺ − y⁻`
    Split { pos: usize, neg: usize },
}

pub fn lp_solve(problem: &LpProblem) -> Result<LpSolution> {
    problem.validate()?;
    let n = problem.objective.len();

    // rewrite in y ≥ 0
    let mut maps = Vec::with_capacity(n);
    let mut ny = 0;
    let mut extra_rows: Vec<(usize, f64)> = Vec::new();
    for j in 0..n {
        let (lo, hi) = (problem.lower[j], problem.upper[j]);
        let map = if lo.is_finite() {
            if hi.is_finite() {
                extra_rows.push((ny, hi - lo));
            }
            Map::Shift { y: ny, lo }
        } else if hi.is_finite() {
            Map::Reflect { y: ny, hi }
        } else {
            ny += 1;
            Map::Split { pos: ny - 1, neg: ny }
        };
        ny += 1;
        maps.push(map);
    }
    let sign = match problem.sense {
        Sense::Maximize => 1.0,
        Sense::Minimize => -1.0,
    };
    let mut c = vec![0.0; ny];
    let expand = |coeffs: &[f64], row: &mut [f64]| -> f64 {
        let mut shift = 0.0;
        for (j, &a) in coeffs.iter().enumerate() {
            match maps[j] {
                Map::Shift { y, lo } => {
                    row[y] += a;
                    shift += a * lo;
                }
                Map::Reflect { y, hi } => {
                    row[y] -= a;
                    shift += a * hi;
                }
                Map::Split { pos, neg } => {
                    row[pos] += a;
                    row[neg] -= a;
                }
            }
        }
        shift
    };
    let signed: Vec<f64> = problem.objective.iter().map(|v| sign * v).collect();
    // the constant shift of the objective is recomputed from x at the end
    expand(&signed, &mut c);

    let mut a_rows = Vec::with_capacity(problem.rows.len() + extra_rows.len());
    for (coeffs, rhs) in &problem.rows {
        let mut row = vec![0.0; ny];
        let shift = expand(coeffs, &mut row);
        a_rows.push((row, rhs - shift));
    }
    for (y, width) in extra_rows {
        let mut row = vec![0.0; ny];
        row[y] = 1.0;
        a_rows.push((row, width));
    }

    let iter_cap = 50 * (a_rows.len() + ny) + 1000;
    let outcome = Tableau::solve(ny, &c, a_rows, iter_cap)?;
    let y = match outcome {
        Outcome::Optimal(y) => y,
        Outcome::Infeasible => {
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                x: Vec::new(),
                objective: f64::NAN,
            })
        }
        Outcome::Unbounded => {
            return Ok(LpSolution {
                status: LpStatus::Unbounded,
                x: Vec::new(),
                objective: sign * f64::INFINITY,
            })
        }
    };
    let x: Vec<f64> = maps
        .iter()
        .map(|m| match *m {
            Map::Shift { y: k, lo } => lo + y[k],
            Map::Reflect { y: k, hi } => hi - y[k],
            Map::Split { pos, neg } => y[pos] - y[neg],
        })
        .collect();
    let objective = problem.objective.iter().zip(&x).map(|(c, x)| c * x).sum();
    Ok(LpSolution {
        status: LpStatus::Optimal,
        x,
        objective,
    })
}

enum Outcome {
    Optimal(Vec<f64>),
    Infeasible,
    Unbounded,
}

/// Dense tableau for `max cᵀy, A y ≤ b, y ≥ 0`. Columns are structural
/// variables, then one slack per row, then artificials; the last entry of
/// every row is the right-hand side.
struct Tableau {
    t: Vec<Vec<f64>>,
    basis: Vec<usize>,
    width: usize,
    iterations: usize,
    cap: usize,
}

impl Tableau {
    fn solve(ny: usize, c: &[f64], rows: Vec<(Vec<f64>, f64)>, cap: usize) -> Result<Outcome> {
        let m = rows.len();
        let n_art = rows.iter().filter(|r| r.1 < 0.0).count();
        let width = ny + m + n_art;
        let mut t = Vec::with_capacity(m);
        let mut basis = Vec::with_capacity(m);
        let mut art = ny + m;
        for (i, (a, b)) in rows.into_iter().enumerate() {
            let mut row = vec![0.0; width + 1];
            let s = if b < 0.0 { -1.0 } else { 1.0 };
            for (k, v) in a.iter().enumerate() {
                row[k] = s * v;
            }
            row[ny + i] = s;
            row[width] = s * b;
            if b < 0.0 {
                row[art] = 1.0;
                basis.push(art);
                art += 1;
            } else {
                basis.push(ny + i);
            }
            t.push(row);
        }
        let mut tab = Tableau {
            t,
            basis,
            width,
            iterations: 0,
            cap,
        };

        if n_art > 0 {
            let mut c1 = vec![0.0; width];
            for v in &mut c1[ny + m..] {
                *v = -1.0;
            }
            let mut obj = tab.objective_row(&c1);
            tab.run(&mut obj, width)?;
            if -obj[width] < -FEAS_TOL {
                return Ok(Outcome::Infeasible);
            }
            tab.drive_out_artificials(ny + m);
        }

        let mut c2 = vec![0.0; width];
        c2[..ny].copy_from_slice(c);
        let mut obj = tab.objective_row(&c2);
        if !tab.run(&mut obj, ny + m)? {
            return Ok(Outcome::Unbounded);
        }
        let mut y = vec![0.0; ny];
        for (i, &b) in tab.basis.iter().enumerate() {
            if b < ny {
                y[b] = tab.t[i][width].max(0.0);
            }
        }
        Ok(Outcome::Optimal(y))
    }

    /// Reduced costs `c − c_B B⁻¹A` and `−c_B x_B` in the last slot.
    fn objective_row(&self, c: &[f64]) -> Vec<f64> {
        let mut obj = c.to_vec();
        obj.push(0.0);
        for (i, &b) in self.basis.iter().enumerate() {
            let cb = c[b];
            if cb != 0.0 {
                for (o, v) in obj.iter_mut().zip(&self.t[i]) {
                    *o -= cb * v;
                }
            }
        }
        obj
    }

    fn pivot(&mut self, obj: &mut [f64], r: usize, c: usize) {
        let p = self.t[r][c];
        for v in self.t[r].iter_mut() {
            *v /= p;
        }
        let prow = self.t[r].clone();
        for (i, row) in self.t.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&prow) {
                    *v -= f * pv;
                }
                row[c] = 0.0;
            }
        }
        let f = obj[c];
        for (v, pv) in obj.iter_mut().zip(&prow) {
            *v -= f * pv;
        }
        obj[c] = 0.0;
        self.basis[r] = c;
    }

    /// Iterates to optimality over entering columns `0..allowed`. Returns
    /// false on an unbounded direction.
    fn run(&mut self, obj: &mut [f64], allowed: usize) -> Result<bool> {
        let mut degenerate = 0;
        loop {
            let bland = degenerate >= DEGENERATE_RUN;
            let entering = if bland {
                (0..allowed).find(|&j| obj[j] > PIVOT_TOL)
            } else {
                (0..allowed)
                    .filter(|&j| obj[j] > PIVOT_TOL)
                    .max_by(|&a, &b| obj[a].total_cmp(&obj[b]).then(b.cmp(&a)))
            };
            let Some(c) = entering else { return Ok(true) };

            let mut leave: Option<(usize, f64)> = None;
            for (i, row) in self.t.iter().enumerate() {
                let a = row[c];
                if a > PIVOT_TOL {
                    let ratio = row[self.width] / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((k, best)) => {
                            if ratio < best - 1e-13 || (ratio <= best + 1e-13 && self.basis[i] < self.basis[k]) {
                                Some((i, ratio))
                            } else {
                                Some((k, best))
                            }
                        }
                    }
                }
            }
            let Some((r, ratio)) = leave else { return Ok(false) };
            if ratio.abs() <= 1e-13 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            self.pivot(obj, r, c);
            self.iterations += 1;
            if self.iterations > self.cap {
                return Err(Error::LpCycling { iterations: self.cap });
            }
        }
    }

    /// After phase one, swaps any zero-level artificial out of the basis, or
    /// zeroes a row that has become redundant.
    fn drive_out_artificials(&mut self, first_art: usize) {
        let mut dummy = vec![0.0; self.width + 1];
        for r in 0..self.t.len() {
            if self.basis[r] < first_art {
                continue;
            }
            if let Some(c) = (0..first_art).find(|&j| self.t[r][j].abs() > 1e-9) {
                self.pivot(&mut dummy, r, c);
            } else {
                for v in self.t[r].iter_mut() {
                    *v = 0.0;
                }
            }
        }
        for row in &mut self.t {
            for v in &mut row[first_art..self.width] {
                *v = 0.0;
            }
        }
    }
}
