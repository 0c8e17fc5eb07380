//! Monte Carlo mean-square trajectory of the pendulum chain, written as CSV.

use std::fs::File;
use std::io::BufWriter;

use mjls_stab::model::pendulum_benchmark;
use mjls_stab::sim::{estimate_ms, simulate_trajectory, write_ms_csv, write_trajectory_csv, SimConfig};

fn main() -> mjls_stab::Result<()> {
    let model = pendulum_benchmark(100)?;
    let config = SimConfig::new(200, 100, 1);
    let ms = estimate_ms(&model, &config)?;
    for k in [0, 25, 50, 100, 150, 199] {
        println!("k = {k:>3}  E|x|^2 = {:.6e}", ms[k]);
    }
    println!("final / initial = {:.3e}", ms[199] / ms[0]);

    let dir = std::env::temp_dir();
    let ms_path = dir.join("mjls_mean_sq.csv");
    write_ms_csv(&ms, BufWriter::new(File::create(&ms_path)?))?;
    let rec = simulate_trajectory(&model, &config, 0)?;
    let tr_path = dir.join("mjls_trajectory.csv");
    write_trajectory_csv(&rec, BufWriter::new(File::create(&tr_path)?))?;
    println!("wrote {} and {}", ms_path.display(), tr_path.display());
    Ok(())
}

#[cfg(test)]
#[test]
fn runs() {
    main().unwrap();
}
