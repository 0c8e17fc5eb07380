//! The exact second-moment recursion next to the spectral test and a Monte
//! Carlo estimate, for a two-mode jump system.

use mjls_stab::linalg::DenseMatrix;
use mjls_stab::sim::{estimate_family_moments, SimConfig};
use mjls_stab::stability::{log_linear_rate, mss_matrix, trace_trajectory, CovarianceState};
use mjls_stab::switched::ModeFamily;

fn main() -> mjls_stab::Result<()> {
    let modes = vec![
        DenseMatrix::from_rows(&[[0.9, 0.2], [0.0, 0.5]]),
        DenseMatrix::from_rows(&[[0.6, 0.0], [-0.3, 0.8]]),
    ];
    let p = DenseMatrix::from_rows(&[[0.7, 0.3], [0.4, 0.6]]);
    let family = ModeFamily::from_parts(modes, p, None)?;

    let rho = mss_matrix(&family)?.spectral_radius()?;
    let traces = trace_trajectory(&family, &CovarianceState::isotropic(&family), 300)?;
    println!("spectral test:          rho = {rho:.6}");
    println!("recursion decay rate:        {:.6}", log_linear_rate(&traces));

    let (ms, _) = estimate_family_moments(&family, &SimConfig::new(120, 20_000, 3))?;
    println!("Monte Carlo decay rate:      {:.6}", log_linear_rate(&ms));
    Ok(())
}

#[cfg(test)]
#[test]
fn runs() {
    main().unwrap();
}
