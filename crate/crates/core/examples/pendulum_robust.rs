//! Error bounds on the joint delay chain of each pendulum symmetry class.

use mjls_stab::model::pendulum_benchmark;
use mjls_stab::robust::estimate_bounds;
use mjls_stab::stability::dedup_agents;
use mjls_stab::switched::{build_mode_family, Scope};

fn main() -> mjls_stab::Result<()> {
    let model = pendulum_benchmark(100)?;
    for class in dedup_agents(&model) {
        let family = build_mode_family(&model, Scope::Agent(class[0]))?;
        let b = estimate_bounds(&family, family.joint_p())?;
        let min_beta = b.beta.iter().copied().fold(f64::INFINITY, f64::min);
        println!(
            "agent {:>3}: m = {:>2}, alpha[0] = {:.4}, min beta = {:+.4}, feasible = {}",
            class[0],
            family.mode_count(),
            b.alpha[0],
            min_beta,
            b.feasible
        );
        println!("           eps = {:?}", b.eps);
    }
    Ok(())
}

#[cfg(test)]
#[test]
fn runs() {
    main().unwrap();
}
