//! The bundled simplex solver on a small bounded problem.

use mjls_stab::robust::{lp_solve, LpProblem, Sense};

fn main() -> mjls_stab::Result<()> {
    // max 3x + 2y  s.t.  x + y ≤ 4,  x + 3y ≤ 6,  0 ≤ x ≤ 3,  y ≥ 0
    let problem = LpProblem::new(Sense::Maximize, vec![3.0, 2.0])
        .with_bounds(vec![0.0, 0.0], vec![3.0, f64::INFINITY])
        .le(vec![1.0, 1.0], 4.0)
        .le(vec![1.0, 3.0], 6.0);
    let sol = lp_solve(&problem)?;
    println!("{:?}: x = {:?}, objective = {}", sol.status, sol.x, sol.objective);
    Ok(())
}

#[cfg(test)]
#[test]
fn runs() {
    main().unwrap();
}
