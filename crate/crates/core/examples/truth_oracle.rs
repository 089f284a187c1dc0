//! Monte Carlo true values for every subset of a scenario.
//!
//! `cargo run --release --example truth_oracle [scenario]`

use fedcmp::data::{SiteId, SiteSet};
use fedcmp::simlab::{compute_truth_table, Scenario, ScenarioSpec, DEFAULT_TRUTH_DRAWS, SITES};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scenario = match std::env::args().nth(1).as_deref() {
        None | Some("i") => Scenario::I,
        Some("ii") => Scenario::Ii,
        Some("iii") => Scenario::Iii,
        Some("iv") => Scenario::Iv,
        Some(other) => return Err(format!("unknown scenario {other}").into()),
    };
    let spec = ScenarioSpec::new(scenario, 2400);
    let table = compute_truth_table(&spec, DEFAULT_TRUTH_DRAWS)?;
    println!("scenario {} ({} draws)", scenario.name(), table.draws);
    for subset in SiteSet::nonempty_subsets(SITES) {
        let t = table.tau(subset, SiteId(0), SiteId(3))?;
        println!("tau(1,4 | {:<9}) = {:8.4}  ± {:.1e}", subset.to_string(), t.value, t.std_error);
    }
    Ok(())
}
