//! How many delay modes the full and the per-agent representations need.

use mjls_stab::model::{neighborhood, pendulum_benchmark};
use mjls_stab::stability::dedup_agents;
use mjls_stab::switched::{enumerate_links, mode_count, ModeCount, Scope};

fn main() -> mjls_stab::Result<()> {
    let model = pendulum_benchmark(100)?;
    let q = model.q();
    println!("full network: {:?}", mode_count(&model, Scope::Global)?);

    // counting every ordered pair inside each neighborhood
    let mut dense_total = 0u64;
    for i in 1..=model.agents() {
        let h = neighborhood(&model, i)?.len();
        dense_total += ModeCount::of(q, h * (h - 1)).exact().unwrap();
    }
    println!("per-agent, complete neighborhoods: {dense_total}");

    // counting only links that carry a block
    for class in dedup_agents(&model) {
        let rep = class[0];
        let links = enumerate_links(&model, Scope::Agent(rep))?;
        println!(
            "class of agent {rep} ({} agents): links {:?} -> {:?} modes",
            class.len(),
            links.as_slice(),
            mode_count(&model, Scope::Agent(rep))?
        );
    }
    Ok(())
}

#[cfg(test)]
#[test]
fn runs() {
    main().unwrap();
}
