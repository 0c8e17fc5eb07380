//! Delay-free stability of the pendulum chain: the spectral radius of the
//! global block matrix.

use mjls_stab::model::{build_global_matrix, nominal_stability, pendulum_benchmark, PendulumParams};

fn main() -> mjls_stab::Result<()> {
    let model = pendulum_benchmark(100)?;
    let a = build_global_matrix(&model);
    let nominal = nominal_stability(&model)?;
    println!("global matrix {}x{}", a.rows(), a.cols());
    println!("rho(A) = {:.6}  stable = {}", nominal.rho, nominal.stable);

    let p = PendulumParams::default();
    println!(
        "interior closed-loop block: {:?}",
        p.closed_loop_block(p.interior_springs)
    );
    println!("coupling block:             {:?}", p.coupling_block());
    Ok(())
}

#[cfg(test)]
#[test]
fn runs() {
    main().unwrap();
}
