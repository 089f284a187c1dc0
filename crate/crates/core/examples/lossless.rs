//! The federated estimate reproduces the pooled-data estimate.
//!
//! `cargo run --release --example lossless [instances]`

use fedcmp::simlab::{verify_lossless, DEFAULT_LOSSLESS_TOLERANCE};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let instances = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(20);
    let summary = verify_lossless(instances, 1, DEFAULT_LOSSLESS_TOLERANCE)?;
    println!("{}", summary.headline());
    println!("estimates compared      {}", summary.comparisons);
    println!("max |rel diff| tau      {:.2e}", summary.max_tau_rel_diff);
    println!("max |rel diff| var      {:.2e}", summary.max_var_rel_diff);
    println!("calibration solves      {}", summary.calibration_solves);
    println!("max balance residual    {:.2e}", summary.max_balance_residual);
    for f in &summary.failures {
        println!("  failed: {f}");
    }
    Ok(())
}
