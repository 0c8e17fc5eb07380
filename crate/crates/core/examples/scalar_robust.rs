//! Transition-matrix error bounds for a two-mode scalar jump system, then a
//! grid scan of the exact test over the certified box.

use mjls_stab::linalg::DenseMatrix;
use mjls_stab::robust::{estimate_bounds, robust_sufficient};
use mjls_stab::stability::mss_matrix_with_transition;
use mjls_stab::switched::ModeFamily;

fn main() -> mjls_stab::Result<()> {
    let nominal = DenseMatrix::from_rows(&[[0.4, 0.6], [0.5, 0.5]]);
    let modes = vec![DenseMatrix::from_rows(&[[0.5]]), DenseMatrix::from_rows(&[[1.25]])];
    let family = ModeFamily::from_parts(modes, nominal.clone(), None)?;

    let b = estimate_bounds(&family, &nominal)?;
    println!("alpha = {:?}", b.alpha);
    println!("beta  = {:?}", b.beta);
    println!("z_ub  = {:?}", b.z_ub);
    println!("z_lb  = {:?}", b.z_lb);
    println!("eps   = {:?}  (certified strictly: {})", b.eps, b.certified);

    // rows stay stochastic: Δp_r = (d_r, −d_r)
    let scan = |e1: f64, e2: f64| -> mjls_stab::Result<(f64, f64, f64)> {
        let steps = 100;
        let mut worst = (0.0, 0.0, 0.0);
        for i in -steps..=steps {
            for j in -steps..=steps {
                let (d1, d2) = (e1 * i as f64 / steps as f64, e2 * j as f64 / steps as f64);
                let delta = DenseMatrix::from_rows(&[[d1, -d1], [d2, -d2]]);
                let p = nominal.add(&delta)?;
                if p.as_slice().iter().any(|v| !(0.0..=1.0).contains(v)) {
                    continue;
                }
                let rho = mss_matrix_with_transition(&family, &p)?.spectral_radius()?;
                if rho > worst.0 {
                    worst = (rho, d1, d2);
                }
            }
        }
        Ok(worst)
    };
    let (rho, d1, d2) = scan(b.eps[0], b.eps[1])?;
    println!("max rho over the computed box: {rho:.9} at d = ({d1}, {d2})");
    let (rho, d1, d2) = scan(0.4, 0.02)?;
    println!("max rho over the box [0.4, 0.02]: {rho:.9} at d = ({d1}, {d2})");

    let corner = DenseMatrix::from_rows(&[[b.eps[0], -b.eps[0]], [0.0, 0.0]]);
    println!(
        "norm condition at a corner: {}",
        robust_sufficient(&family, &nominal, &corner)?
    );
    Ok(())
}

#[cfg(test)]
#[test]
fn runs() {
    main().unwrap();
}
