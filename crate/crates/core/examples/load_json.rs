//! A small network read from JSON, checked by both the full and the
//! per-agent tests.

use mjls_stab::model::{load_model, model_to_json, nominal_stability};
use mjls_stab::stability::{mss_test_full, mss_test_reduced};

const MODEL: &str = r#"{
  "N": 3, "n": 1, "tau_d": 1,
  "blocks": [
    {"i": 1, "j": 1, "values": [0.5]},
    {"i": 2, "j": 2, "values": [0.4]},
    {"i": 3, "j": 3, "values": [0.6]},
    {"i": 1, "j": 2, "values": [0.2]},
    {"i": 2, "j": 3, "values": [-0.1]},
    {"i": 3, "j": 1, "values": [0.15]}
  ],
  "chain": {"P": [0.5, 0.5, 0.3, 0.7], "pi0": [1.0, 0.0]}
}"#;

fn main() -> mjls_stab::Result<()> {
    let model = load_model(MODEL)?;
    println!("nominal: {:?}", nominal_stability(&model)?);
    let full = mss_test_full(&model)?;
    println!(
        "full:    rho = {:.6} over {} modes -> {:?}",
        full.scopes[0].rho, full.scopes[0].m, full.overall
    );
    let reduced = mss_test_reduced(&model, false)?;
    for s in &reduced.scopes {
        println!("{:<8} rho = {:.6} over {} modes", s.scope.to_string(), s.rho, s.m);
    }
    println!("reduced: {:?}", reduced.overall);
    println!("{}", model_to_json(&model));
    Ok(())
}

#[cfg(test)]
#[test]
fn runs() {
    main().unwrap();
}
